"""Protocol-level value types shared by every other module.

Port labels are plain ints: 0 is the self-port, 1..delta are real ports.
The lock variable is ``int | None``: ``None`` means unlocked, ``0`` means
self-locked and ``l >= 1`` means locked by the neighbor on port ``l``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

PortLabel = int
LockVar = Optional[int]

UNLOCKED: LockVar = None
SELF_PORT: PortLabel = 0


class State(str, enum.Enum):
    IDLE = "idle"
    PREPARE = "prepare"
    COMPETE = "compete"
    WIN = "win"
    LOCKED = "locked"
    UNLOCK = "unlock"


# The only legal successor of each lock state; COMPETE may also repeat.
NEXT_STATE = {
    State.IDLE: State.PREPARE,
    State.PREPARE: State.COMPETE,
    State.COMPETE: State.WIN,
    State.WIN: State.LOCKED,
    State.LOCKED: State.UNLOCK,
    State.UNLOCK: State.IDLE,
}


class Phase(str, enum.Enum):
    IDLE = "idle"
    PREPARE = "prepare"
    COMPETE = "compete"


class MsgKind(str, enum.Enum):
    PREPARE = "prepare"
    READY = "ready"
    REQUEST_LOCK = "request-lock"
    WIN = "win"
    SET_LOCK = "set-lock"
    ACK_LOCK = "ack-lock"
    RELEASE_LOCK = "release-lock"
    ACK_UNLOCK = "ack-unlock"


class ValidationError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Message:
    """One protocol message. ``payload`` is a priority for request-lock,
    a bool for win, and ``None`` for every other kind."""

    kind: MsgKind
    payload: int | bool | None = None

    def __post_init__(self) -> None:
        if self.kind is MsgKind.REQUEST_LOCK:
            if isinstance(self.payload, bool) or not isinstance(self.payload, int) or self.payload < 0:
                raise ValidationError(f"request-lock needs a non-negative int priority, got {self.payload!r}")
        elif self.kind is MsgKind.WIN:
            if not isinstance(self.payload, bool):
                raise ValidationError(f"win needs a bool payload, got {self.payload!r}")
        elif self.payload is not None:
            raise ValidationError(f"{self.kind.value} carries no payload, got {self.payload!r}")

    def key(self) -> tuple[str, int]:
        return (self.kind.value, -1 if self.payload is None else int(self.payload))


# Shared instances for the payload-free kinds.
PREPARE = Message(MsgKind.PREPARE)
READY = Message(MsgKind.READY)
SET_LOCK = Message(MsgKind.SET_LOCK)
ACK_LOCK = Message(MsgKind.ACK_LOCK)
RELEASE_LOCK = Message(MsgKind.RELEASE_LOCK)
ACK_UNLOCK = Message(MsgKind.ACK_UNLOCK)
WIN_TRUE = Message(MsgKind.WIN, True)
WIN_FALSE = Message(MsgKind.WIN, False)


def request_lock(priority: int) -> Message:
    return Message(MsgKind.REQUEST_LOCK, priority)


@dataclass(slots=True)
class NodeVars:
    """All protocol variables of one node.

    ``W`` and ``P`` are keyed by port so each label carries at most one
    outcome / priority. The disconnection buffer lives in the network.
    """

    lock: LockVar = UNLOCKED
    state: State = State.IDLE
    phase: Phase = Phase.IDLE
    L: set[int] = field(default_factory=set)
    R: set[int] = field(default_factory=set)
    H: set[int] = field(default_factory=set)
    A: set[int] = field(default_factory=set)
    C: set[int] = field(default_factory=set)
    W: dict[int, bool] = field(default_factory=dict)
    P: dict[int, int] = field(default_factory=dict)

    def copy(self) -> NodeVars:
        return NodeVars(
            self.lock, self.state, self.phase,
            set(self.L), set(self.R), set(self.H), set(self.A), set(self.C),
            dict(self.W), dict(self.P),
        )

    def key(self) -> tuple:
        """Hashable canonical form; equal keys mean indistinguishable nodes."""
        return (
            -1 if self.lock is None else self.lock,
            self.state.value,
            self.phase.value,
            tuple(sorted(self.L)),
            tuple(sorted(self.R)),
            tuple(sorted(self.H)),
            tuple(sorted(self.A)),
            tuple(sorted(self.C)),
            tuple(sorted(self.W.items())),
            tuple(sorted(self.P.items())),
        )

    @classmethod
    def from_key(cls, key: tuple) -> NodeVars:
        lock, state, phase, L, R, H, A, C, W, P = key
        return cls(
            None if lock == -1 else lock, State(state), Phase(phase),
            set(L), set(R), set(H), set(A), set(C), dict(W), dict(P),
        )

    def invariant_errors(self, delta: int) -> list[str]:
        errors = []
        if self.lock is not None and not 0 <= self.lock <= delta:
            errors.append(f"lock {self.lock} outside 0..{delta}")
        for name in ("L", "R", "H", "A", "C", "W", "P"):
            labels = getattr(self, name)
            bad = [x for x in labels if not 0 <= x <= delta]
            if bad:
                errors.append(f"{name} holds labels {sorted(bad)} outside 0..{delta}")
        if self.A & self.C:
            errors.append(f"A and C overlap on {sorted(self.A & self.C)}")
        if self.H & self.A:
            errors.append(f"H and A overlap on {sorted(self.H & self.A)}")
        if self.H & self.C:
            errors.append(f"H and C overlap on {sorted(self.H & self.C)}")
        return errors


def new_node_vars(delta: int) -> NodeVars:
    """Initial variables of a node with ``delta`` ports."""
    if isinstance(delta, bool) or not isinstance(delta, int) or delta < 1:
        raise ValidationError(f"delta must be a positive int, got {delta!r}")
    return NodeVars()
