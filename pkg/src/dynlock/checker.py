"""Safety and progress observers.

:class:`Monitor` watches a :class:`~dynlock.scheduler.Simulation` stage by
stage. It checks mutual exclusion and the structural invariants, follows
every lock request from the Lock call to success, segments competition
trials and classifies each request's rounds as open or closed.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

from .core import SELF_PORT, MsgKind, State
from .protocol import INITIATOR_CHECKS, ActionId


@dataclass
class Report:
    """A violation (safety) or defect (anything else that should not happen)."""

    kind: str
    stage: int
    detail: str
    nodes: tuple = ()

    def as_record(self, severity: str) -> dict:
        return {"kind": severity, "stage": self.stage, "check": self.kind, "nodes": list(self.nodes),
                "detail": self.detail}


# -- lock sets -----------------------------------------------------------------

def lock_sets(locks: Sequence[int | None], ports: Sequence[dict[int, int]],
              detectors: Sequence[set[int]] | None = None) -> dict[int, set[int]]:
    """Lock set of every node that holds at least one lock.

    ``v`` belongs to the lock set of the neighbor on port ``lock(v)``, and
    to its own when ``lock(v) == 0``. With ``detectors``, a lock whose
    port is in ``v``'s disconnection buffer is stale (it names an edge
    that is gone, even if the label was reused) and is skipped.
    """
    out: dict[int, set[int]] = {}
    for v, lock in enumerate(locks):
        if lock is None:
            continue
        if detectors is not None and lock in detectors[v]:
            continue
        owner = v if lock == SELF_PORT else ports[v].get(lock)
        if owner is None:
            continue
        held = out.get(owner)
        if held is None:
            out[owner] = {v}
        else:
            held.add(v)
    return out


def check_mutual_exclusion(snapshot) -> Report | None:
    """First pair of intersecting lock sets, or ``None``."""
    sets = lock_sets([v.lock for v in snapshot.vars], snapshot.ports, snapshot.detector)
    holder: dict[int, int] = {}
    for owner in sorted(sets):
        for v in sorted(sets[owner]):
            other = holder.get(v)
            if other is not None:
                return Report("mutual-exclusion", snapshot.stage,
                              f"node {v} is in the lock sets of {other} and {owner}", (other, owner, v))
            holder[v] = owner
    return None


def lost_locks(snapshot) -> list[tuple[int, int]]:
    """Pairs ``(u, v)`` where ``u`` is locked and ``v`` is a live member of
    ``L(u)`` that does not hold a fresh lock for ``u``."""
    out = []
    vars_ = snapshot.vars
    for u, vu in enumerate(vars_):
        if vu.state is not State.LOCKED:
            continue
        d = snapshot.detector[u]
        for p in vu.L:
            if p in d:
                continue
            v = u if p == SELF_PORT else snapshot.ports[u].get(p)
            if v is None:
                continue
            want = SELF_PORT if v == u else _port_toward(snapshot.ports[v], u)
            lock = vars_[v].lock
            if lock != want or lock in snapshot.detector[v]:
                out.append((u, v))
    return out


def _port_toward(ports: dict[int, int], u: int) -> int | None:
    for label, w in ports.items():
        if w == u:
            return label
    return None


# -- records -------------------------------------------------------------------

@dataclass
class TrialRecord:
    initiator: int
    request_id: int
    start_stage: int
    start_action: str
    l_size: int
    end_stage: int | None = None
    outcome: str | None = None  # "won", "lost" or "aborted-by-dynamics"
    is_open: bool = True
    k: int | None = None
    round_span: int | None = None

    @property
    def open_round_span(self) -> int | None:
        return self.round_span if self.is_open else None

    def as_record(self) -> dict:
        return {"kind": "trial", "request": self.request_id, "node": self.initiator,
                "start": self.start_stage, "end": self.end_stage, "via": self.start_action,
                "outcome": self.outcome, "open": self.is_open, "k": self.k, "rounds": self.round_span}


@dataclass
class LockRequestRecord:
    request_id: int
    requester: int
    call_stage: int
    issue_stage: int
    persistent_set: set[int]
    neighbors_at_issue: tuple = ()
    success_stage: int | None = None
    checkdone_stage: int | None = None
    trials: list[TrialRecord] = field(default_factory=list)
    # Persistent neighbors that disconnected after success but before CheckDone.
    dropped_late: set[int] = field(default_factory=set)
    open_rounds: int | None = None
    closed_rounds: int | None = None
    total_rounds: int | None = None

    @property
    def resolved(self) -> bool:
        return self.success_stage is not None

    def open_trials_to_win(self) -> int | None:
        """Open trials up to and including the one that won."""
        count = 0
        for t in self.trials:
            if t.is_open:
                count += 1
            if t.outcome == "won":
                return count or None
        return None

    def as_record(self) -> dict:
        won = next((i for i, t in enumerate(self.trials, 1) if t.outcome == "won"), None)
        return {"kind": "request", "request": self.request_id, "node": self.requester,
                "call": self.call_stage, "issue": self.issue_stage, "success": self.success_stage,
                "checkdone": self.checkdone_stage, "persistent": sorted(self.persistent_set),
                "neighbors": list(self.neighbors_at_issue),
                "open_rounds": self.open_rounds, "closed_rounds": self.closed_rounds,
                "total_rounds": self.total_rounds, "trials": len(self.trials),
                "open_trials": sum(1 for t in self.trials if t.is_open),
                "win_trial": won, "open_trials_to_win": self.open_trials_to_win()}


def detect_success(record: LockRequestRecord, stage: int, held: set[int] | None) -> bool:
    """Mark ``record`` successful if the requester holds exactly itself and
    its persistent neighbors at ``stage``."""
    if record.success_stage is not None or stage <= record.issue_stage:
        return record.success_stage is not None
    target = record.persistent_set | {record.requester}
    if held is not None and held == target:
        record.success_stage = stage
        return True
    return False


def classify_rounds(record: LockRequestRecord, round_of: Sequence[int], end_stage: int | None = None) -> LockRequestRecord:
    """Count the open and closed rounds between the Lock call and success.

    A round is closed when every stage of it inside the request lies in a
    closed trial; everything else (open trials, preparation, post-win) is
    open.
    """
    end = record.success_stage if end_stage is None else end_stage
    start = record.call_stage
    closed = [False] * (end - start)
    for t in record.trials:
        if t.is_open or t.end_stage is None:
            continue
        for s in range(max(t.start_stage, start), min(t.end_stage, end)):
            closed[s - start] = True
    seen: set[int] = set()
    open_: set[int] = set()
    for i in range(end - start):
        r = round_of[start + i]
        seen.add(r)
        if not closed[i]:
            open_.add(r)
    record.open_rounds = len(open_)
    record.total_rounds = len(seen)
    record.closed_rounds = len(seen) - len(open_)
    return record


# -- dependency DAG ------------------------------------------------------------

@dataclass
class DependencyDag:
    """Bipartite dependency graph between competing initiators and participants.

    Vertex ``u`` is node ``u`` as initiator and ``n + v`` is node ``v`` as
    participant.
    """

    stage: int
    n: int
    initiators: set[int] = field(default_factory=set)
    participants: set[int] = field(default_factory=set)
    succ: dict[int, list[int]] = field(default_factory=dict)

    @property
    def edges(self) -> set[tuple[int, int]]:
        return {(a, b) for a, out in self.succ.items() for b in out}

    def add_edge(self, a: int, b: int) -> None:
        self.succ.setdefault(a, []).append(b)

    def find_cycle(self) -> list[int] | None:
        color: dict[int, int] = {}
        for root in sorted(self.succ):
            if color.get(root):
                continue
            stack = [(root, iter(self.succ.get(root, ())))]
            path = [root]
            color[root] = 1
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    color[node] = 2
                    stack.pop()
                    path.pop()
                    continue
                c = color.get(nxt, 0)
                if c == 1:
                    return path[path.index(nxt):] + [nxt]
                if c == 0:
                    color[nxt] = 1
                    stack.append((nxt, iter(self.succ.get(nxt, ()))))
                    path.append(nxt)
        return None

    def initiators_on_longest_path(self, u: int) -> int:
        """Largest number of initiator vertices on a path starting at initiator ``u``."""
        memo: dict[int, int] = {}
        n = self.n

        def walk(x: int) -> int:
            got = memo.get(x)
            if got is not None:
                return got
            memo[x] = 0  # cycle guard; acyclicity is checked separately
            best = 0
            for y in self.succ.get(x, ()):
                best = max(best, walk(y))
            memo[x] = best + (1 if x < n else 0)
            return memo[x]

        return walk(u)

    def height(self, u: int) -> int:
        """Vertices on the longest path from initiator ``u`` to a leaf."""
        memo: dict[int, int] = {}

        def walk(x: int) -> int:
            if x in memo:
                return memo[x]
            memo[x] = 1
            memo[x] = 1 + max((walk(y) for y in self.succ.get(x, ())), default=0)
            return memo[x]

        return walk(u)


def build_dag(snapshot) -> DependencyDag:
    """Dependency DAG at a stage boundary.

    For a competing initiator ``u`` and each live ``v`` in ``L(u)``: the
    edge points from ``u`` to ``v`` while ``v`` still owes ``u`` a win for
    its latest request-lock, and from ``v`` back to ``u`` once that win is
    sent (in transit or recorded in ``W(u)``) until ``u`` answers it.
    """
    vars_ = snapshot.vars
    n = len(vars_)
    dag = DependencyDag(snapshot.stage, n)
    for u in range(n):
        vu = vars_[u]
        if vu.state is not State.COMPETE:
            continue
        dag.initiators.add(u)
        d = snapshot.detector[u]
        ports = snapshot.ports[u]
        inbox = snapshot.inbox[u]
        for p in sorted(vu.L):
            if p in d:
                continue
            v = u if p == SELF_PORT else ports.get(p)
            if v is None:
                continue
            dag.participants.add(v)
            answered = p in vu.W or any(
                e.sender == v and e.message.kind is MsgKind.WIN for e in inbox
            )
            if answered:
                dag.add_edge(n + v, u)
            else:
                dag.add_edge(u, n + v)
    return dag


# -- online monitor ------------------------------------------------------------

class InvariantViolation(RuntimeError):
    pass


class Monitor:
    """Online checker attached to a simulation as an observer.

    Safety violations and defects are collected, never raised, unless
    ``strict`` is set. ``check_dag`` builds the dependency DAG at every
    stage with a competing node.
    """

    def __init__(self, n: int, delta: int, check_dag: bool = True, strict: bool = False, trace=None):
        self.n = n
        self.delta = delta
        self.check_dag = check_dag
        self.strict = strict
        self.trace = trace
        self.enabled_limit = 2 * delta + 4
        self.violations: list[Report] = []
        self.defects: list[Report] = []
        self.requests: list[LockRequestRecord] = []
        self.trials: list[TrialRecord] = []
        self.current: dict[int, LockRequestRecord] = {}   # from InitLock until unlock
        self.unresolved: dict[int, LockRequestRecord] = {}  # awaiting success
        self.trial_active: dict[int, TrialRecord] = {}
        self.pending_k: list[TrialRecord] = []
        self.prev_check: dict[int, ActionId] = {}
        self.last_action: dict[int, ActionId] = {}
        self.lifetimes: list[dict] = [dict() for _ in range(n)]
        self.progress_count = 0
        self.progress_sum = 0
        self.progress_max = 0
        self.max_enabled = 0
        self.max_initiator_checks = 0
        self.dag_checks = 0
        self.max_k = 0
        self.stages = 0
        self.late_successes = 0
        self.transit_seen = 0
        self.emitted: set[int] = set()
        self.stale_locks = 0
        self.check_held = True

    # -- reporting --

    def _violation(self, report: Report) -> None:
        self.violations.append(report)
        if self.trace is not None:
            self.trace.record(report.as_record("violation"))
        if self.strict:
            raise InvariantViolation(f"stage {report.stage}: {report.kind}: {report.detail}")

    def _defect(self, report: Report) -> None:
        self.defects.append(report)
        if self.trace is not None:
            self.trace.record(report.as_record("defect"))
        if self.strict:
            raise InvariantViolation(f"stage {report.stage}: {report.kind}: {report.detail}")

    # -- observer hooks --

    def stage_start(self, sim, stage: int, changes, calls) -> None:
        self.stages += 1
        net = sim.net
        vars_ = sim.vars
        ports = net.ports
        locks = [v.lock for v in vars_]

        if net.max_pair_count > self.transit_seen:
            self.transit_seen = net.max_pair_count
            if self.transit_seen > 2:
                self._violation(Report("transit", stage, f"{self.transit_seen} messages in transit on one pair"))

        for ch in changes:
            if ch.op != "down":
                continue
            for a, b in ((ch.u, ch.v), (ch.v, ch.u)):
                rec = self.unresolved.get(a)
                if rec is not None:
                    rec.persistent_set.discard(b)
                    continue
                rec = self.current.get(a)
                if rec is not None and rec.checkdone_stage is None:
                    rec.dropped_late.add(b)

        detector = net.detector
        sets = lock_sets(locks, ports, detector)
        for v, lock in enumerate(locks):
            if lock is not None and lock in detector[v] and lock in ports[v]:
                self.stale_locks += 1
        if self.check_held:
            for u, v in lost_locks(sim.snapshot()):
                self._violation(Report("lock-lost", stage, f"locked node {u} does not hold the lock of {v}", (u, v)))
        seen: dict[int, int] = {}
        for owner, held in sets.items():
            for v in held:
                if v in seen:
                    self._violation(Report("mutual-exclusion", stage,
                                           f"node {v} is in the lock sets of {seen[v]} and {owner}",
                                           (seen[v], owner, v)))
                seen[v] = owner

        if self.unresolved:
            round_of = sim.ledger.round_of
            for u in list(self.unresolved):
                rec = self.unresolved[u]
                if detect_success(rec, stage, sets.get(u)):
                    self._finish(rec, round_of, sim)

        for u, trial in self.trial_active.items():
            if not trial.is_open:
                continue
            d = detector[u]
            pu = ports[u]
            for p in vars_[u].L:
                if p in d:
                    continue
                w = u if p == SELF_PORT else pu.get(p)
                if w is not None and locks[w] is not None:
                    trial.is_open = False
                    break

        if self.check_dag and self.trial_active:
            dag = build_dag(sim.snapshot())
            self.dag_checks += 1
            cycle = dag.find_cycle()
            if cycle is not None:
                self._defect(Report("dag-cycle", stage, f"dependency cycle {cycle}", tuple(cycle)))
            for trial in self.pending_k:
                if trial.end_stage is None:
                    trial.k = dag.initiators_on_longest_path(trial.initiator)
                    if trial.k > self.max_k:
                        self.max_k = trial.k
        self.pending_k = []

        self._check_enabled(sim, stage)

        for rec in sim.last_stage:
            errors = rec.effect.vars_after.invariant_errors(self.delta)
            if errors:
                self._defect(Report("node-vars", stage, "; ".join(errors), (rec.node,)))
            old, new = rec.before.state, rec.effect.vars_after.state
            if new is not old and not _legal_step(old, new):
                self._defect(Report("state-step", stage, f"{old.value} -> {new.value}", (rec.node,)))

    def _check_enabled(self, sim, stage: int) -> None:
        limit = self.enabled_limit
        rnd = sim.ledger.index
        round_of = sim.ledger.round_of
        prev_round = round_of[-2] if len(round_of) > 1 else rnd
        executed = {rec.node: rec.execution.action for rec in sim.last_stage}
        new_checks: dict[int, ActionId] = {}
        for u in range(self.n):
            execs = sim.enabled[u]
            life = self.lifetimes[u]
            if not execs:
                if life:
                    for start in life.values():
                        self._progress(prev_round - start + 1)
                    life.clear()
                prev = self.prev_check.get(u)
                if prev is not None and executed.get(u) is not prev:
                    self._defect(Report("check-disabled", stage, f"{prev.value} was disabled", (u,)))
                continue
            count = len(execs)
            if count > self.max_enabled:
                self.max_enabled = count
            if count > limit:
                self._violation(Report("enabled-count", stage, f"{count} enabled executions > {limit}", (u,)))
            checks = [ex.action for ex in execs if ex.action in INITIATOR_CHECKS]
            if len(checks) > self.max_initiator_checks:
                self.max_initiator_checks = len(checks)
            if len(checks) > 1:
                self._violation(Report("initiator-checks", stage, f"{len(checks)} initiator checks enabled", (u,)))
            prev = self.prev_check.get(u)
            if prev is not None and executed.get(u) is not prev and prev not in checks:
                self._defect(Report("check-disabled", stage, f"{prev.value} was disabled", (u,)))
            if checks:
                new_checks[u] = checks[0]
            keys = [ex.key for ex in execs]
            if life:
                current = set(keys)
                for key in [k for k in life if k not in current]:
                    self._progress(prev_round - life.pop(key) + 1)
            for key in keys:
                if key not in life:
                    life[key] = rnd
        self.prev_check = new_checks

    def _progress(self, rounds: int) -> None:
        self.progress_count += 1
        self.progress_sum += rounds
        if rounds > self.progress_max:
            self.progress_max = rounds

    def on_execution(self, sim, stage: int, rec) -> None:
        u = rec.node
        action = rec.execution.action
        start = self.lifetimes[u].pop(rec.execution.key, None)
        if start is not None:
            self._progress(sim.ledger.index - start + 1)

        if action is ActionId.INIT_LOCK:
            if u in self.unresolved:
                self._defect(Report("overlapping-request", stage, "InitLock with an unresolved request", (u,)))
            call_stage = stage
            if sim.workload is not None:
                call_stage = sim.workload.call_stage.get(u, stage)
            neighbors = tuple(sim.net.neighbors(u))
            record = LockRequestRecord(len(self.requests), u, call_stage, stage, set(neighbors), neighbors)
            self.requests.append(record)
            self.current[u] = record
            self.unresolved[u] = record
        elif action is ActionId.CHECK_START:
            self._start_trial(u, stage, action, rec)
        elif action is ActionId.CHECK_WIN:
            trial = self.trial_active.pop(u, None)
            vars_after = rec.effect.vars_after
            if trial is None:
                self._defect(Report("trial-orphan", stage, "CheckWin without an open trial", (u,)))
            else:
                trial.end_stage = stage
                round_of = sim.ledger.round_of
                trial.round_span = round_of[stage] - round_of[trial.start_stage] + 1
                if vars_after.state is State.WIN:
                    trial.outcome = "won"
                elif len(vars_after.L) < trial.l_size:
                    trial.outcome = "aborted-by-dynamics"
                else:
                    trial.outcome = "lost"
                self.trials.append(trial)
                if self.trace is not None:
                    self.trace.record(trial.as_record())
            if vars_after.state is State.COMPETE:
                self._start_trial(u, stage, action, rec)
        elif action is ActionId.CHECK_DONE:
            record = self.current.get(u)
            if record is None:
                self._defect(Report("checkdone-orphan", stage, "CheckDone without a request", (u,)))
            else:
                record.checkdone_stage = stage
                if record.resolved:
                    self._emit(record)
                returned = {sim.net.node_at(u, p) for p in rec.effect.returned_lock_set}
                expected = record.persistent_set | {u}
                if not expected - record.dropped_late <= returned <= expected:
                    self._defect(Report("checkdone-mismatch", stage,
                                        f"returned {sorted(returned)} but persistent set is {sorted(expected)}",
                                        (u,)))
        elif action is ActionId.INIT_UNLOCK:
            record = self.current.pop(u, None)
            if record is not None and not record.resolved:
                self._defect(Report("no-success", stage,
                                    f"request {record.request_id} released before its lock set matched", (u,)))
                self.unresolved.pop(u, None)
                classify_rounds(record, sim.ledger.round_of, end_stage=stage)
                self._emit(record)

    def _start_trial(self, u: int, stage: int, action: ActionId, rec) -> None:
        record = self.current.get(u)
        trial = TrialRecord(u, -1 if record is None else record.request_id, stage, action.value,
                            len(rec.effect.vars_after.L))
        if record is not None:
            record.trials.append(trial)
        self.trial_active[u] = trial
        self.pending_k.append(trial)

    def _finish(self, rec: LockRequestRecord, round_of: Sequence[int], sim) -> None:
        del self.unresolved[rec.requester]
        classify_rounds(rec, round_of)
        if rec.checkdone_stage is not None:
            self.late_successes += 1
            self._emit(rec)

    def _emit(self, rec: LockRequestRecord) -> None:
        if rec.request_id in self.emitted:
            return
        self.emitted.add(rec.request_id)
        if self.trace is not None:
            self.trace.record(rec.as_record())

    def finalize(self, sim) -> None:
        """Close out at the end of a run and emit every request not yet emitted.

        Unresolved requests are classified up to the final stage.
        """
        for rec in self.unresolved.values():
            classify_rounds(rec, sim.ledger.round_of, end_stage=sim.stage)
        for rec in self.requests:
            self._emit(rec)

    @property
    def progress_mean(self) -> float:
        return self.progress_sum / self.progress_count if self.progress_count else 0.0


def _legal_step(old: State, new: State) -> bool:
    from .core import NEXT_STATE

    return NEXT_STATE[old] is new
