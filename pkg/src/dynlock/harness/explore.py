"""Bounded exhaustive exploration of tiny instances.

Every stage branches over all subsets of enabled nodes, every enabled
execution of each activated node and every priority value a drawing
action can produce. Messages in transit are always deliverable, so the
delivery order is branched over as well (any message delay is covered).
States are deduplicated on their canonical key and explored breadth
first up to a depth bound.
"""

from __future__ import annotations

import itertools
import time
from collections import deque
from dataclasses import dataclass, field

from ..checker import build_dag, lock_sets, lost_locks
from ..core import Message, MsgKind, NodeVars, Phase, State, new_node_vars
from ..network import Envelope, Network, build_network
from ..protocol import (
    DRAWING_ACTIONS,
    INITIATOR_CHECKS,
    ActionExecution,
    Delivery,
    ProtocolFault,
    apply_action,
    enabled_action_executions,
)
from ..scheduler import StageSnapshot


class FixedDraw:
    """Stand-in priority stream whose single draw is fixed in advance."""

    def __init__(self, value: int):
        self.value = value

    def randrange(self, k: int) -> int:
        if not 0 <= self.value < k:
            raise ValueError(f"fixed draw {self.value} outside range {k}")
        return self.value


@dataclass
class Finding:
    kind: str
    detail: str
    depth: int
    trace: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "detail": self.detail, "depth": self.depth, "trace": self.trace}


@dataclass
class ExploreResult:
    n: int
    delta: int
    K: int
    depth: int
    states: int = 0
    transitions: int = 0
    depth_reached: int = 0
    complete: bool = True
    violations: list[Finding] = field(default_factory=list)
    deadlocks: int = 0
    first_deadlock: Finding | None = None
    max_enabled: int = 0
    max_initiator_checks: int = 0
    max_in_transit: int = 0
    elapsed: float = 0.0
    visited: set | None = None

    @property
    def ok(self) -> bool:
        return self.complete and not self.violations

    def summary(self) -> dict:
        return {
            "n": self.n, "delta": self.delta, "K": self.K, "depth": self.depth,
            "states": self.states, "transitions": self.transitions, "depth_reached": self.depth_reached,
            "complete": self.complete, "violations": len(self.violations), "deadlocks": self.deadlocks,
            "max_enabled": self.max_enabled, "max_initiator_checks": self.max_initiator_checks,
            "max_in_transit": self.max_in_transit, "elapsed": round(self.elapsed, 3),
        }


def _message(key: tuple) -> Message:
    kind, payload = key
    kind = MsgKind(kind)
    if kind is MsgKind.WIN:
        return Message(kind, bool(payload))
    if kind is MsgKind.REQUEST_LOCK:
        return Message(kind, payload)
    return Message(kind)


def _network(n: int, delta: int, topology: tuple, transit: tuple, detectors: tuple) -> Network:
    net = Network(n, delta, transit_limit=None)
    for u, v, pu, pv in topology:
        net.ports[u][pu] = v
        net.ports[v][pv] = u
        net.port_of[(u, v)] = pu
        net.port_of[(v, u)] = pv
    for sender, receiver, msgs in transit:
        for mk in msgs:
            net.inbox[receiver].append(Envelope(net.next_msg_id, _message(mk), sender, receiver, 0, 0))
            net.next_msg_id += 1
        net.pair_count[(sender, receiver)] = len(msgs)
    net.detector = [set(d) for d in detectors]
    return net


def _deliveries(net: Network, u: int) -> list[Delivery]:
    seen = set()
    out = []
    for env in net.inbox[u]:
        key = (env.sender, env.message)
        if key in seen:
            continue  # identical copies give identical branches
        seen.add(key)
        out.append(Delivery(env.message, net.from_port(env), env))
    return out


def _consume(net: Network, u: int, ex: ActionExecution) -> None:
    sender = ex.token.sender
    for env in net.inbox[u]:
        if env.sender == sender and env.message == ex.message:
            net.consume(env)
            return
    raise ProtocolFault(f"message {ex.message} from {sender} is not in transit")  # pragma: no cover


def _describe(u: int, ex: ActionExecution, priority: int | None) -> dict:
    out = {"node": u, "action": ex.action.value}
    if ex.message is not None:
        out.update(port=ex.port, msg=ex.message.kind.value, payload=ex.message.payload)
    if priority is not None:
        out["priority"] = priority
    return out


def explore_exhaustive(
    n: int,
    topology: str = "complete",
    delta: int | None = None,
    K: int = 2,
    depth: int = 12,
    requesters: tuple[int, ...] | None = None,
    requests: int = 1,
    disconnect: tuple[int, int] | None = None,
    max_states: int = 2_000_000,
    keep_visited: bool = False,
    stop_at_first: bool = True,
) -> ExploreResult:
    """Explore every schedule of a tiny static instance up to ``depth`` stages.

    ``requesters`` call Lock (``requests`` times each) as soon as they are
    idle; every locked node calls Unlock at once. ``disconnect`` adds one
    optional edge removal that may happen at any stage boundary.
    """
    if delta is None:
        delta = max(1, n - 1) if topology == "complete" else 2
    if n < 1 or n > 4:
        raise ValueError("exhaustive exploration is limited to 1..4 nodes")
    if requesters is None:
        requesters = tuple(range(n))
    started = time.perf_counter()
    base = build_network(topology, n, delta)
    if disconnect is not None and not base.has_edge(*disconnect):
        raise ValueError(f"scripted disconnect {disconnect} is not an edge of the {topology} topology")
    check_limit = 2 * delta + 4
    result = ExploreResult(n, delta, K, depth)

    init_vars = tuple(new_node_vars(delta).key() for _ in range(n))
    left = tuple(requests if u in requesters else 0 for u in range(n))
    initial = (init_vars, (False,) * n, (False,) * n, (), tuple(() for _ in range(n)),
               base.topology_key(), left, False)

    parent: dict[tuple, tuple | None] = {initial: None}
    frontier = deque([(initial, 0)])
    visited_proj = set() if keep_visited else None

    def path_to(key: tuple) -> list:
        steps = []
        while parent[key] is not None:
            prev, step = parent[key]
            steps.append(step)
            key = prev
        return steps[::-1]

    def report(kind: str, detail: str, key: tuple, d: int, extra_step=None) -> None:
        trace = path_to(key)
        if extra_step is not None:
            trace.append(extra_step)
        result.violations.append(Finding(kind, detail, d, trace))

    def state_checks(key: tuple, d: int) -> None:
        vars_keys, _, _, transit, _, topo, _, _ = key
        vars_ = [NodeVars.from_key(k) for k in vars_keys]
        for u, v in enumerate(vars_):
            errors = v.invariant_errors(delta)
            if errors:
                report("node-vars", f"node {u}: {'; '.join(errors)}", key, d)
        for sender, receiver, msgs in transit:
            if len(msgs) > result.max_in_transit:
                result.max_in_transit = len(msgs)
            if len(msgs) > 2:
                report("transit", f"{len(msgs)} messages in transit {sender}->{receiver}", key, d)
        ports = [dict() for _ in range(n)]
        for u, v, pu, pv in topo:
            ports[u][pu] = v
            ports[v][pv] = u
        detectors = [set(x) for x in key[4]]
        sets = lock_sets([v.lock for v in vars_], ports, detectors)
        for u, v in lost_locks(StageSnapshot(d, vars_, ports, detectors, None)):
            report("lock-lost", f"locked node {u} does not hold the lock of {v}", key, d)
        holder: dict[int, int] = {}
        for owner in sorted(sets):
            for v in sorted(sets[owner]):
                if v in holder:
                    report("mutual-exclusion", f"node {v} is in the lock sets of {holder[v]} and {owner}", key, d)
                holder[v] = owner

    def boundary(key: tuple):
        """Apply the Lock/Unlock calls of this boundary; return the new flags."""
        vars_keys, plock, punlock, transit, detectors, topo, left, cut = key
        plock, punlock, left = list(plock), list(punlock), list(left)
        for u, vk in enumerate(vars_keys):
            state = vk[1]
            if state == State.IDLE.value and not plock[u] and left[u] > 0:
                plock[u] = True
                left[u] -= 1
            elif state == State.LOCKED.value and not punlock[u]:
                punlock[u] = True
        return plock, punlock, left

    def options(key: tuple):
        """Adversary choices at this boundary: (network, disconnect happened)."""
        _, _, _, transit, detectors, topo, _, cut = key
        out = [(_network(n, delta, topo, transit, detectors), cut)]
        if disconnect is not None and not cut:
            net = _network(n, delta, topo, transit, detectors)
            if net.has_edge(*disconnect):
                net.disconnect(*disconnect)
                out.append((net, True))
        return out

    def enabled_of(vars_, net, plock, punlock):
        return [
            enabled_action_executions(vars_[u], _deliveries(net, u), net.detector[u], plock[u], punlock[u])
            for u in range(n)
        ]

    def obligations_hold(child: tuple, owed: list[tuple[int, object]]) -> str | None:
        vars_keys = child[0]
        plock, punlock, _ = boundary(child)
        vars_ = [NodeVars.from_key(k) for k in vars_keys]
        for net, _ in options(child):
            for u, action in owed:
                execs = enabled_action_executions(vars_[u], (), net.detector[u], plock[u], punlock[u])
                if not any(ex.action is action for ex in execs):
                    return f"node {u}: {action.value} was disabled before execution"
        return None

    while frontier:
        key, d = frontier.popleft()
        if d > result.depth_reached:
            result.depth_reached = d
        state_checks(key, d)
        if result.violations and stop_at_first:
            break
        vars_ = [NodeVars.from_key(k) for k in key[0]]
        plock, punlock, left = boundary(key)

        for net, cut in options(key):
            enabled = enabled_of(vars_, net, plock, punlock)
            for u, execs in enumerate(enabled):
                result.max_enabled = max(result.max_enabled, len(execs))
                if len(execs) > check_limit:
                    report("enabled-count", f"node {u}: {len(execs)} enabled executions", key, d)
                checks = sum(1 for ex in execs if ex.action in INITIATOR_CHECKS)
                result.max_initiator_checks = max(result.max_initiator_checks, checks)
                if checks > 1:
                    report("initiator-checks", f"node {u}: {checks} initiator checks enabled", key, d)
            snap = StageSnapshot(d, vars_, net.ports, net.detector, net.inbox)
            cycle = build_dag(snap).find_cycle()
            if cycle is not None:
                report("dag-cycle", f"dependency cycle {cycle}", key, d)

            active = [u for u in range(n) if enabled[u]]
            if not active and not cut and any(v.state is not State.IDLE or v.phase is not Phase.IDLE for v in vars_):
                result.deadlocks += 1
                if result.first_deadlock is None:
                    stuck = {u: (v.state.value, v.phase.value) for u, v in enumerate(vars_)
                             if v.state is not State.IDLE or v.phase is not Phase.IDLE}
                    result.first_deadlock = Finding("deadlock", f"no enabled executions; busy nodes {stuck}",
                                                    d, path_to(key))
            if d >= depth:
                continue
            topo_key = net.topology_key()
            transit_key = net.transit_key()
            det_key = tuple(tuple(sorted(x)) for x in net.detector)

            for size in range(len(active) + 1):
                for subset in itertools.combinations(active, size):
                    choices = [enabled[u] for u in subset]
                    for picks in itertools.product(*choices):
                        drawers = [i for i, ex in enumerate(picks) if ex.action in DRAWING_ACTIONS]
                        for draws in itertools.product(range(K), repeat=len(drawers)):
                            draw_of = dict(zip(drawers, draws))
                            child_net = _network(n, delta, topo_key, transit_key, det_key)
                            new_vars = list(key[0])
                            new_plock, new_punlock = list(plock), list(punlock)
                            step = {"disconnect": list(disconnect) if cut and not key[7] else None, "execs": []}
                            effects = []
                            owed = []
                            try:
                                for i, u in enumerate(subset):
                                    ex = picks[i]
                                    dsnap = child_net.take_detector(u)
                                    if ex.message is not None:
                                        _consume(child_net, u, ex)
                                    eff = apply_action(vars_[u], ex, dsnap, FixedDraw(draw_of.get(i, 0)), K,
                                                       child_net.ports[u].keys())
                                    effects.append((u, eff))
                                    step["execs"].append(_describe(u, ex, draw_of.get(i)))
                                    new_vars[u] = eff.vars_after.key()
                                    if eff.lock_call_consumed:
                                        new_plock[u] = False
                                    if eff.unlock_call_consumed:
                                        new_punlock[u] = False
                                for u, eff in effects:
                                    for msg, port in eff.sends:
                                        child_net.send(u, msg, port, d)
                            except ProtocolFault as exc:
                                report("protocol-fault", str(exc), key, d, step)
                                continue
                            result.transitions += 1
                            executed = {u: picks[i].action for i, u in enumerate(subset)}
                            for u in range(n):
                                for ex in enabled[u]:
                                    if ex.action in INITIATOR_CHECKS and executed.get(u) is not ex.action:
                                        owed.append((u, ex.action))
                            child = (tuple(new_vars), tuple(new_plock), tuple(new_punlock),
                                     child_net.transit_key(), tuple(tuple(sorted(x)) for x in child_net.detector),
                                     child_net.topology_key(), tuple(left), cut)
                            if owed:
                                problem = obligations_hold(child, owed)
                                if problem is not None:
                                    report("check-disabled", problem, key, d, step)
                            if child in parent:
                                continue
                            parent[child] = (key, step)
                            if visited_proj is not None:
                                visited_proj.add(child[:6])
                            if len(parent) > max_states:
                                result.complete = False
                                frontier.clear()
                                break
                            frontier.append((child, d + 1))
                        if not result.complete:
                            break
                    if not result.complete:
                        break
                if not result.complete:
                    break
        if not result.complete or (result.violations and stop_at_first):
            break

    result.states = len(parent)
    result.elapsed = time.perf_counter() - started
    if visited_proj is not None:
        visited_proj.add(initial[:6])
        result.visited = visited_proj
    return result
