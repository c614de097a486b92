"""Semi-synchronous stage loop with fair activation and round accounting."""

from __future__ import annotations

import random
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

from .core import NodeVars, Phase, State, new_node_vars
from .network import EdgeChange, Network, Static, adversary_step
from .protocol import ActionEffect, ActionExecution, Delivery, apply_action, enabled_action_executions


# -- activation ----------------------------------------------------------------

@dataclass(frozen=True)
class AllActive:
    """Activate every enabled node every stage."""

    b_act: int = 0

    def select(self, enabled: Sequence[int], skipped: Sequence[int], rng: random.Random) -> list[int]:
        return list(enabled)

    def describe(self) -> str:
        return "all"


@dataclass(frozen=True)
class RandomSubset:
    """Activate each enabled node with probability ``p``; a node skipped
    ``b_act`` stages in a row is activated unconditionally."""

    p: float
    b_act: int = 4

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"activation probability must lie in [0, 1], got {self.p}")
        if self.b_act < 0:
            raise ValueError("b_act must be non-negative")

    def select(self, enabled, skipped, rng):
        # One draw per enabled node keeps the stream aligned with the enabled set.
        return [u for u in enabled if rng.random() < self.p or skipped[u] >= self.b_act]

    def describe(self) -> str:
        return f"random:{self.p:g}"


@dataclass(frozen=True)
class LazyAdversary:
    """Skip every enabled node for exactly ``b_act`` stages before running it."""

    b_act: int = 4

    def select(self, enabled, skipped, rng):
        return [u for u in enabled if skipped[u] >= self.b_act]

    def describe(self) -> str:
        return "lazy"


def parse_activation(text: str, b_act: int = 4):
    """``all`` | ``random:P`` | ``lazy``."""
    name, _, arg = text.partition(":")
    if name == "all" and not arg:
        return AllActive()
    if name == "random":
        return RandomSubset(float(arg) if arg else 0.5, b_act)
    if name == "lazy" and not arg:
        return LazyAdversary(b_act)
    raise ValueError(f"bad activation policy {text!r}")


# -- selection -----------------------------------------------------------------

class UniformRandom:
    """Pick one enabled execution uniformly (one ``randrange`` call)."""

    name = "uniform"

    def observe(self, node: int, execs: Sequence[ActionExecution]) -> None:
        pass

    def choose(self, node: int, execs: Sequence[ActionExecution], rng: random.Random) -> ActionExecution:
        if len(execs) == 1:
            return execs[0]
        return execs[rng.randrange(len(execs))]


class FifoQueue:
    """Per-node queue of executions in the order they became enabled."""

    name = "fifo"

    def __init__(self) -> None:
        self.queues: dict[int, dict] = {}

    def observe(self, node: int, execs: Sequence[ActionExecution]) -> None:
        queue = self.queues.get(node)
        if not execs:
            if queue:
                del self.queues[node]
            return
        current = {ex.key: ex for ex in execs}
        if queue is None:
            self.queues[node] = current
            return
        for key in [k for k in queue if k not in current]:
            del queue[key]
        for key, ex in current.items():
            queue[key] = ex  # refreshes the object, keeps queue position

    def choose(self, node, execs, rng):
        return next(iter(self.queues[node].values()))


def parse_selection(text: str):
    if text == "uniform":
        return UniformRandom()
    if text == "fifo":
        return FifoQueue()
    raise ValueError(f"bad selection policy {text!r}")


# -- rounds --------------------------------------------------------------------

@dataclass
class RoundLedger:
    """Round ``r`` spans stages ``starts[r]`` up to ``starts[r+1]``.

    ``round_of[s]`` is the round stage ``s`` belongs to.
    """

    index: int = 0
    starts: list[int] = field(default_factory=lambda: [0])
    pending: set[int] = field(default_factory=set)
    round_of: list[int] = field(default_factory=list)
    empty_rounds: int = 0
    _opened: bool = False

    def advance(self, stage: int, executed: Iterable[int], enabled: set[int]) -> bool:
        """Fold in the previous stage's executions at the boundary of ``stage``.

        Returns True when a new round starts at this boundary.
        """
        if not self._opened:
            self._opened = True
            self.pending = set(enabled)
            if not self.pending:
                self.empty_rounds += 1
            self.round_of.append(self.index)
            return True
        pending = self.pending
        if pending:
            pending.difference_update(executed)
            pending.intersection_update(enabled)
        started = not pending
        if started:
            self.index += 1
            self.starts.append(stage)
            self.pending = set(enabled)
            if not self.pending:
                self.empty_rounds += 1
        self.round_of.append(self.index)
        return started


def advance_rounds(ledger: RoundLedger, stage: int, executed: Iterable[int], enabled: set[int]) -> RoundLedger:
    ledger.advance(stage, executed, enabled)
    return ledger


# -- simulation ----------------------------------------------------------------

class Execution(NamedTuple):
    node: int
    execution: ActionExecution
    effect: ActionEffect
    before: NodeVars
    d_snapshot: frozenset


class StageSnapshot(NamedTuple):
    """Live view of the system at a stage boundary (not a copy)."""

    stage: int
    vars: Sequence[NodeVars]
    ports: Sequence[dict[int, int]]
    detector: Sequence[set[int]]
    inbox: Sequence[list]


def streams(seed: int) -> dict[str, random.Random]:
    """Independent, named random streams derived from one seed."""
    names = ("adversary", "activation", "selection", "priority", "delay", "workload")
    return {name: random.Random(f"{seed}:{name}") for name in names}


_QUIET_STATES = (State.IDLE, State.LOCKED)


class Simulation:
    """Owns the system state and advances it one stage at a time.

    Observers get ``stage_start(sim, stage, changes, calls)`` after the
    enabled sets and rounds are updated and ``on_execution(sim, stage,
    execution)`` after each action. ``trace`` is any object with a
    ``record(dict)`` method.
    """

    def __init__(
        self,
        net: Network,
        K: int,
        seed: int = 0,
        adversary=Static(),
        activation=AllActive(),
        selection=None,
        b_msg: int = 0,
        workload=None,
        observers: Sequence = (),
        trace=None,
    ):
        self.net = net
        self.n = net.n
        self.delta = net.delta
        self.K = K
        self.adversary = adversary
        self.activation = activation
        self.selection = selection if selection is not None else UniformRandom()
        self.b_msg = b_msg
        self.workload = workload
        self.observers = list(observers)
        self.trace = trace
        self.rng = streams(seed)
        self.vars: list[NodeVars] = [new_node_vars(net.delta) for _ in range(self.n)]
        self.pending_lock = [False] * self.n
        self.pending_unlock = [False] * self.n
        self.skipped = [0] * self.n
        self.enabled: list[list[ActionExecution]] = [[] for _ in range(self.n)]
        self.ledger = RoundLedger()
        self.stage = 0
        self.executed_prev: list[int] = []
        self.last_stage: list[Execution] = []
        self.doubled_sends = 0

    def snapshot(self) -> StageSnapshot:
        return StageSnapshot(self.stage, self.vars, self.net.ports, self.net.detector, self.net.inbox)

    def _compute_enabled(self, stage: int) -> list[int]:
        net = self.net
        enabled_nodes = []
        for u in range(self.n):
            v = self.vars[u]
            box = net.inbox[u]
            plock = self.pending_lock[u]
            punlock = self.pending_unlock[u]
            if not box and not plock and not punlock and v.state in _QUIET_STATES \
                    and v.phase is not Phase.COMPETE:
                self.enabled[u] = []
                continue
            inbox = [Delivery(e.message, net.from_port(e), e) for e in box if e.ready_stage <= stage]
            execs = enabled_action_executions(v, inbox, net.detector[u], plock, punlock)
            self.enabled[u] = execs
            if execs:
                enabled_nodes.append(u)
        return enabled_nodes

    def run_stage(self) -> list[Execution]:
        s = self.stage
        net = self.net
        trace = self.trace

        changes: list[EdgeChange] = adversary_step(self.adversary, net, self.rng["adversary"], s, self.vars)
        calls = self.workload.boundary(self, s) if self.workload is not None else []
        enabled_nodes = self._compute_enabled(s)
        self.ledger.advance(s, self.executed_prev, set(enabled_nodes))
        rnd = self.ledger.index

        selection = self.selection
        if isinstance(selection, FifoQueue):
            for u in range(self.n):
                selection.observe(u, self.enabled[u])

        if trace is not None:
            trace.record({"kind": "stage", "stage": s, "round": rnd})
            for ch in changes:
                trace.record({"kind": "edge", "stage": s, "round": rnd, "op": ch.op, "u": ch.u, "v": ch.v,
                              "port_u": ch.port_u, "port_v": ch.port_v, "lost": ch.lost})
            for node, what in calls:
                trace.record({"kind": "call", "stage": s, "round": rnd, "node": node, "call": what})

        for obs in self.observers:
            obs.stage_start(self, s, changes, calls)

        activated = self.activation.select(enabled_nodes, self.skipped, self.rng["activation"])
        active = set(activated)
        for u in enabled_nodes:
            self.skipped[u] = 0 if u in active else self.skipped[u] + 1
        for u in range(self.n):
            if not self.enabled[u]:
                self.skipped[u] = 0

        results: list[Execution] = []
        sel_rng = self.rng["selection"]
        for u in activated:
            ex = selection.choose(u, self.enabled[u], sel_rng)
            before = self.vars[u]
            d = net.take_detector(u)
            if ex.message is not None:
                net.consume(ex.token)
            effect = apply_action(before, ex, d, self.rng["priority"], self.K, net.ports[u].keys())
            self.vars[u] = effect.vars_after
            if effect.lock_call_consumed:
                self.pending_lock[u] = False
            if effect.unlock_call_consumed:
                self.pending_unlock[u] = False
            if len(effect.sends) > 1 and effect.cleanup_sends:
                ports = [p for _, p in effect.sends]
                self.doubled_sends += len(ports) - len(set(ports))
            record = Execution(u, ex, effect, before, d)
            results.append(record)
            if trace is not None:
                trace.record(_exec_record(s, rnd, record))
            for obs in self.observers:
                obs.on_execution(self, s, record)

        b_msg = self.b_msg
        delay_rng = self.rng["delay"]
        for rec in results:
            for msg, port in rec.effect.sends:
                delay = delay_rng.randint(0, b_msg) if b_msg else 0
                net.send(rec.node, msg, port, s, delay)

        self.executed_prev = activated
        self.last_stage = results
        self.stage = s + 1
        return results

    def run(self, stages: int) -> None:
        for _ in range(stages):
            self.run_stage()

    def state_key(self) -> tuple:
        """Canonical system state, comparable with the exhaustive explorer."""
        net = self.net
        return (
            tuple(v.key() for v in self.vars),
            tuple(self.pending_lock),
            tuple(self.pending_unlock),
            net.transit_key(),
            tuple(tuple(sorted(d)) for d in net.detector),
            net.topology_key(),
        )


def _exec_record(stage: int, rnd: int, rec: Execution) -> dict:
    ex = rec.execution
    v = rec.effect.vars_after
    out = {
        "kind": "exec",
        "stage": stage,
        "round": rnd,
        "node": rec.node,
        "action": ex.action.value,
        "port": ex.port,
        "msg": None if ex.message is None else ex.message.kind.value,
        "payload": None if ex.message is None else ex.message.payload,
        "d": sorted(rec.d_snapshot),
        "sends": [[m.kind.value, m.payload, p] for m, p in rec.effect.sends],
        "lock": v.lock,
        "state": v.state.value,
        "phase": v.phase.value,
    }
    return out
