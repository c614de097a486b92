"""Time-varying graph with ports, disconnection detectors and messages in transit."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import NamedTuple

import networkx as nx

from .core import SELF_PORT, Message, State


class NetworkFault(RuntimeError):
    """A precondition of the network model was broken by the caller."""


class TransitOverflow(NetworkFault):
    """More messages in transit between two nodes than the protocol allows."""


@dataclass(slots=True, eq=False)
class Envelope:
    msg_id: int
    message: Message
    sender: int
    receiver: int
    sent_stage: int
    ready_stage: int


class EdgeChange(NamedTuple):
    op: str  # "up" or "down"
    u: int
    v: int
    port_u: int
    port_v: int
    lost: int = 0


class Network:
    """Ports, live edges, disconnection buffers and the transit store.

    ``ports[u]`` maps each occupied port label of ``u`` to the neighbor on
    it. Messages to a node live in ``inbox[node]``; port-0 messages are
    never lost.
    """

    def __init__(self, n: int, delta: int, transit_limit: int | None = 2):
        if n < 1 or delta < 1:
            raise ValueError(f"need n >= 1 and delta >= 1, got n={n}, delta={delta}")
        self.n = n
        self.delta = delta
        self.transit_limit = transit_limit
        self.ports: list[dict[int, int]] = [{} for _ in range(n)]
        self.port_of: dict[tuple[int, int], int] = {}
        self.detector: list[set[int]] = [set() for _ in range(n)]
        self.inbox: list[list[Envelope]] = [[] for _ in range(n)]
        self.pair_count: dict[tuple[int, int], int] = {}
        self.max_pair_count = 0
        self.next_msg_id = 0
        self.lost = 0

    # -- topology ---------------------------------------------------------

    def degree(self, u: int) -> int:
        return len(self.ports[u])

    def has_edge(self, u: int, v: int) -> bool:
        return (u, v) in self.port_of

    def neighbors(self, u: int) -> list[int]:
        return [self.ports[u][p] for p in sorted(self.ports[u])]

    def live_ports(self, u: int) -> list[int]:
        return sorted(self.ports[u])

    def open_port(self, u: int) -> int | None:
        used = self.ports[u]
        for label in range(1, self.delta + 1):
            if label not in used:
                return label
        return None

    def edges(self) -> list[tuple[int, int]]:
        return sorted((u, v) for (u, v) in self.port_of if u < v)

    def node_at(self, u: int, port: int) -> int | None:
        """Node behind ``port`` of ``u`` (``u`` itself for the self-port)."""
        if port == SELF_PORT:
            return u
        return self.ports[u].get(port)

    def connect(self, u: int, v: int) -> EdgeChange | None:
        """Connect ``u`` and ``v`` on their lowest open ports; ``None`` if either is full."""
        if u == v:
            raise NetworkFault(f"cannot connect node {u} to itself")
        if (u, v) in self.port_of:
            raise NetworkFault(f"edge {u}-{v} is already live")
        pu, pv = self.open_port(u), self.open_port(v)
        if pu is None or pv is None:
            return None
        self.ports[u][pu] = v
        self.ports[v][pv] = u
        self.port_of[(u, v)] = pu
        self.port_of[(v, u)] = pv
        return EdgeChange("up", u, v, pu, pv)

    def disconnect(self, u: int, v: int) -> EdgeChange:
        """Remove a live edge, dropping every message on it in both directions."""
        if (u, v) not in self.port_of:
            raise NetworkFault(f"edge {u}-{v} is not live")
        pu = self.port_of.pop((u, v))
        pv = self.port_of.pop((v, u))
        del self.ports[u][pu]
        del self.ports[v][pv]
        self.detector[u].add(pu)
        self.detector[v].add(pv)
        lost = self._drop(v, u) + self._drop(u, v)
        self.lost += lost
        return EdgeChange("down", u, v, pu, pv, lost)

    def _drop(self, sender: int, receiver: int) -> int:
        box = self.inbox[receiver]
        kept = [e for e in box if e.sender != sender]
        dropped = len(box) - len(kept)
        if dropped:
            self.inbox[receiver] = kept
            self.pair_count[(sender, receiver)] = 0
        return dropped

    def take_detector(self, u: int) -> frozenset[int]:
        """Snapshot-and-reset of ``u``'s disconnection buffer."""
        snap = frozenset(self.detector[u])
        self.detector[u].clear()
        return snap

    # -- messages ---------------------------------------------------------

    def send(self, sender: int, message: Message, port: int, stage: int, delay: int = 0) -> Envelope:
        if port == SELF_PORT:
            receiver = sender
        else:
            receiver = self.ports[sender].get(port)
            if receiver is None:
                raise NetworkFault(f"node {sender} sent {message.kind.value} on dead port {port}")
        env = Envelope(self.next_msg_id, message, sender, receiver, stage, stage + 1 + delay)
        self.next_msg_id += 1
        self.inbox[receiver].append(env)
        key = (sender, receiver)
        count = self.pair_count.get(key, 0) + 1
        self.pair_count[key] = count
        if count > self.max_pair_count:
            self.max_pair_count = count
        if self.transit_limit is not None and count > self.transit_limit:
            raise TransitOverflow(
                f"{count} messages in transit from {sender} to {receiver} (limit {self.transit_limit})"
            )
        return env

    def deliverable(self, v: int, stage: int) -> list[Envelope]:
        return [e for e in self.inbox[v] if e.ready_stage <= stage]

    def from_port(self, env: Envelope) -> int:
        if env.sender == env.receiver:
            return SELF_PORT
        return self.port_of[(env.receiver, env.sender)]

    def consume(self, env: Envelope) -> None:
        self.inbox[env.receiver].remove(env)
        self.pair_count[(env.sender, env.receiver)] -= 1

    def in_transit(self, sender: int, receiver: int) -> list[Envelope]:
        return [e for e in self.inbox[receiver] if e.sender == sender]

    # -- canonical forms --------------------------------------------------

    def topology_key(self) -> tuple:
        return tuple(sorted((u, v, pu, self.port_of[(v, u)]) for (u, v), pu in self.port_of.items() if u < v))

    def transit_key(self) -> tuple:
        out = []
        for receiver in range(self.n):
            by_sender: dict[int, list] = {}
            for e in self.inbox[receiver]:
                by_sender.setdefault(e.sender, []).append(e.message.key())
            for sender in sorted(by_sender):
                out.append((sender, receiver, tuple(sorted(by_sender[sender]))))
        return tuple(out)

    def snapshot(self) -> dict:
        """Plain-data view of the topology for trace records."""
        return {"n": self.n, "delta": self.delta, "edges": [list(e) for e in self.topology_key()]}


# -- initial topologies ------------------------------------------------------

TOPOLOGIES = ("empty", "path", "ring", "complete", "regular", "random")


def build_network(kind: str, n: int, delta: int, seed: int = 0, transit_limit: int | None = 2) -> Network:
    """A fresh network whose edges are connected in sorted order."""
    if kind == "empty":
        pairs = []
    elif kind == "path":
        pairs = [(i, i + 1) for i in range(n - 1)]
    elif kind == "ring":
        pairs = [(i, (i + 1) % n) for i in range(n)] if n > 2 else [(i, i + 1) for i in range(n - 1)]
    elif kind == "complete":
        pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    elif kind == "regular":
        d = min(delta, n - 1)
        if (n * d) % 2:
            d -= 1
        graph = nx.random_regular_graph(d, n, seed=seed) if d > 0 else nx.empty_graph(n)
        pairs = [tuple(sorted(e)) for e in graph.edges()]
    elif kind == "random":
        rng = random.Random(f"{seed}:topology")
        pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
        rng.shuffle(pairs)
    else:
        raise ValueError(f"unknown topology {kind!r}; expected one of {TOPOLOGIES}")
    if kind != "random":
        pairs = sorted(set((min(p), max(p)) for p in pairs))
    net = Network(n, delta, transit_limit)
    for u, v in pairs:
        if net.has_edge(u, v):
            continue
        change = net.connect(u, v)
        if change is None and kind in ("path", "ring", "complete"):
            raise ValueError(f"{kind} topology on {n} nodes needs more than {delta} ports")
    net.detector = [set() for _ in range(n)]
    return net


# -- adversaries -------------------------------------------------------------

@dataclass(frozen=True)
class Static:
    def describe(self) -> str:
        return "static"


@dataclass(frozen=True)
class RandomChurn:
    """Each unordered node pair toggles with probability ``q`` per stage."""

    q: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"churn probability must lie in [0, 1], got {self.q}")

    def describe(self) -> str:
        return f"churn:{self.q:g}"


@dataclass(frozen=True)
class TargetedDisconnect:
    """Cuts an edge inside the lock set of busy initiators, then lets
    absent pairs reconnect with probability ``reconnect``."""

    rate: float
    reconnect: float = 0.05

    def describe(self) -> str:
        return f"targeted:{self.rate:g}:{self.reconnect:g}"


@dataclass(frozen=True)
class ScriptedDisconnect:
    """Disconnects ``u``-``v`` at the boundary of stage ``stage`` (if live)."""

    stage: int
    u: int
    v: int

    def describe(self) -> str:
        return f"scripted:{self.stage}:{self.u}:{self.v}"


AdversaryPolicy = Static | RandomChurn | TargetedDisconnect | ScriptedDisconnect


def _sample_pairs(n: int, q: float, rng: random.Random):
    """Indices of the pairs (in lexicographic order) that toggle this stage.

    Uses geometric skips, so each pair is picked independently with
    probability ``q``.
    """
    total = n * (n - 1) // 2
    if q <= 0.0 or total == 0:
        return
    if q >= 1.0:
        yield from range(total)
        return
    log_keep = math.log1p(-q)
    i = -1
    while True:
        skip = math.log(1.0 - rng.random()) / log_keep
        if i + 1 + skip >= total:  # also catches an infinite skip for tiny q
            return
        i += 1 + int(skip)
        yield i


def _pair_at(n: int, index: int) -> tuple[int, int]:
    # Row u holds n-1-u pairs (u, u+1..n-1).
    u = 0
    row = n - 1
    while index >= row:
        index -= row
        u += 1
        row -= 1
    return u, u + 1 + index


def adversary_step(policy, net: Network, rng: random.Random, stage: int = 0, nodes=None) -> list[EdgeChange]:
    """Apply one stage boundary of edge dynamics and return the changes.

    ``nodes`` is the list of :class:`NodeVars`, read only by the targeted
    adversary.
    """
    changes: list[EdgeChange] = []
    if isinstance(policy, Static):
        return changes
    if isinstance(policy, RandomChurn):
        n = net.n
        for index in _sample_pairs(n, policy.q, rng):
            u, v = _pair_at(n, index)
            if net.has_edge(u, v):
                changes.append(net.disconnect(u, v))
            else:
                change = net.connect(u, v)
                if change is not None:
                    changes.append(change)
        return changes
    if isinstance(policy, ScriptedDisconnect):
        if stage == policy.stage and net.has_edge(policy.u, policy.v):
            changes.append(net.disconnect(policy.u, policy.v))
        return changes
    if isinstance(policy, TargetedDisconnect):
        busy = (State.PREPARE, State.COMPETE, State.WIN)
        for u in range(net.n):
            if nodes is None or nodes[u].state not in busy:
                continue
            if rng.random() >= policy.rate:
                continue
            targets = sorted(p for p in nodes[u].L if p != SELF_PORT and p in net.ports[u])
            if targets:
                v = net.ports[u][targets[rng.randrange(len(targets))]]
                changes.append(net.disconnect(u, v))
        n = net.n
        for index in _sample_pairs(n, policy.reconnect, rng):
            u, v = _pair_at(n, index)
            if not net.has_edge(u, v):
                change = net.connect(u, v)
                if change is not None:
                    changes.append(change)
        return changes
    raise TypeError(f"unknown adversary policy {policy!r}")


def parse_adversary(text: str):
    """``static`` | ``churn:Q`` | ``targeted:RATE[:RECONNECT]`` | ``scripted:STAGE:U:V``."""
    name, _, rest = text.partition(":")
    args = [a for a in rest.split(":") if a] if rest else []
    try:
        if name == "static" and not args:
            return Static()
        if name == "churn" and len(args) == 1:
            return RandomChurn(float(args[0]))
        if name == "targeted" and 1 <= len(args) <= 2:
            return TargetedDisconnect(*map(float, args))
        if name == "scripted" and len(args) == 3:
            return ScriptedDisconnect(*map(int, args))
    except ValueError as exc:
        raise ValueError(f"bad adversary {text!r}: {exc}") from None
    raise ValueError(f"bad adversary {text!r}")
