"""The locking protocol as pure functions over :class:`NodeVars`.

Every action copies the node's variables, runs the clean-up step that
folds in the disconnection snapshot, performs its body and reports the
resulting variables together with the messages it wants sent.
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Protocol

from .core import (
    ACK_LOCK,
    ACK_UNLOCK,
    PREPARE,
    READY,
    RELEASE_LOCK,
    SELF_PORT,
    SET_LOCK,
    WIN_FALSE,
    WIN_TRUE,
    Message,
    MsgKind,
    NodeVars,
    Phase,
    State,
    request_lock,
)


class ProtocolFault(RuntimeError):
    """An action was executed although its guard did not hold."""


class Role(str, enum.Enum):
    INITIATOR = "initiator"
    PARTICIPANT = "participant"


class ActionId(str, enum.Enum):
    INIT_LOCK = "InitLock"
    RECEIVE_PREPARE = "ReceivePrepare"
    RECEIVE_READY = "ReceiveReady"
    CHECK_START = "CheckStart"
    RECEIVE_REQUEST = "ReceiveRequest"
    CHECK_PRIORITIES = "CheckPriorities"
    RECEIVE_WIN = "ReceiveWin"
    CHECK_WIN = "CheckWin"
    RECEIVE_SET_LOCK = "ReceiveSetLock"
    RECEIVE_ACK_LOCK = "ReceiveAckLock"
    CHECK_DONE = "CheckDone"
    INIT_UNLOCK = "InitUnlock"
    RECEIVE_RELEASE = "ReceiveRelease"
    RECEIVE_ACK_UNLOCK = "ReceiveAckUnlock"
    CHECK_UNLOCKED = "CheckUnlocked"

    @property
    def role(self) -> Role:
        return _ROLES[self]

    @property
    def is_receive(self) -> bool:
        return self in RECEIVE_KIND


_ROLES = {a: Role.INITIATOR for a in ActionId}
for _a in (ActionId.RECEIVE_PREPARE, ActionId.RECEIVE_REQUEST, ActionId.CHECK_PRIORITIES,
           ActionId.RECEIVE_SET_LOCK, ActionId.RECEIVE_RELEASE):
    _ROLES[_a] = Role.PARTICIPANT

RECEIVE_ACTION = {
    MsgKind.PREPARE: ActionId.RECEIVE_PREPARE,
    MsgKind.READY: ActionId.RECEIVE_READY,
    MsgKind.REQUEST_LOCK: ActionId.RECEIVE_REQUEST,
    MsgKind.WIN: ActionId.RECEIVE_WIN,
    MsgKind.SET_LOCK: ActionId.RECEIVE_SET_LOCK,
    MsgKind.ACK_LOCK: ActionId.RECEIVE_ACK_LOCK,
    MsgKind.RELEASE_LOCK: ActionId.RECEIVE_RELEASE,
    MsgKind.ACK_UNLOCK: ActionId.RECEIVE_ACK_UNLOCK,
}
RECEIVE_KIND = {action: kind for kind, action in RECEIVE_ACTION.items()}

INITIATOR_CHECKS = frozenset(
    {ActionId.CHECK_START, ActionId.CHECK_WIN, ActionId.CHECK_DONE, ActionId.CHECK_UNLOCKED}
)
# Actions whose body draws a fresh priority (CheckWin only on its losing branch).
DRAWING_ACTIONS = frozenset({ActionId.CHECK_START, ActionId.CHECK_WIN})


class Delivery(NamedTuple):
    """A message in transit to a node, as seen by that node."""

    message: Message
    port: int
    token: Any = None


@dataclass(frozen=True, slots=True)
class ActionExecution:
    action: ActionId
    message: Message | None = None
    port: int | None = None
    # Opaque handle naming the in-transit message instance (simulator message id).
    token: Any = field(default=None, compare=False)

    def __post_init__(self) -> None:
        expected = RECEIVE_KIND.get(self.action)
        if expected is None:
            if self.message is not None or self.port is not None:
                raise ValueError(f"{self.action.value} takes no message")
        elif self.message is None or self.message.kind is not expected or self.port is None:
            raise ValueError(f"{self.action.value} must carry a {expected.value} message and a port")

    @property
    def key(self) -> Any:
        """Identity used to follow an execution across stages."""
        if self.message is None:
            return self.action
        return self.token if self.token is not None else (self.port, self.message)


@dataclass(slots=True)
class ActionEffect:
    vars_after: NodeVars
    sends: list[tuple[Message, int]] = field(default_factory=list)
    returned_lock_set: frozenset[int] | None = None
    lock_call_consumed: bool = False
    unlock_call_consumed: bool = False
    # How many of ``sends`` came from the clean-up step (hold promotion).
    cleanup_sends: int = 0
    drew_priority: int | None = None


class PriorityStream(Protocol):
    def randrange(self, stop: int) -> int: ...


def draw_priority(rng: PriorityStream, K: int) -> int:
    """Uniform priority in ``0..K-1``; consumes exactly one ``rng.randrange(K)`` call."""
    if isinstance(K, bool) or not isinstance(K, int) or K < 1:
        raise ValueError(f"K must be a positive int, got {K!r}")
    return rng.randrange(K)


def priority_decision(P: dict[int, int], lock: int | None, C: Iterable[int]) -> dict[int, bool]:
    """Outcome to send to each candidate after all priorities are in.

    Only an unlocked participant with a unique highest priority has a
    winner; ties and locked participants reject everyone.
    """
    outcome = {label: False for label in C}
    if lock is None and P:
        top = max(P.values())
        best = [label for label, p in P.items() if p == top]
        if len(best) == 1:
            outcome[best[0]] = True
    return outcome


def _clean_up(v: NodeVars, d: Iterable[int], sends: list[tuple[Message, int]]) -> None:
    for label in d:
        if v.lock == label:
            v.lock = None
        v.L.discard(label)
        v.R.discard(label)
        v.W.pop(label, None)
        v.H.discard(label)
        v.A.discard(label)
        v.C.discard(label)
        v.P.pop(label, None)
    if not v.C:
        for label in sorted(v.H):
            sends.append((READY, label))
        v.A |= v.H
        v.H = set()
        v.phase = Phase.PREPARE if v.A else Phase.IDLE


def clean_up(vars: NodeVars, d_snapshot: Iterable[int]) -> ActionEffect:
    v = vars.copy()
    sends: list[tuple[Message, int]] = []
    _clean_up(v, d_snapshot, sends)
    return ActionEffect(v, sends, cleanup_sends=len(sends))


def _minus(labels: set[int], d: frozenset[int] | set[int]) -> set[int]:
    return labels - d if d else labels


def _count_minus(labels, d) -> int:
    if not d:
        return len(labels)
    return sum(1 for x in labels if x not in d)


def initiator_check(v: NodeVars, d) -> ActionId | None:
    """The (at most one) initiator Check action whose guard holds."""
    state = v.state
    if state is State.PREPARE:
        return ActionId.CHECK_START if _minus(v.R, d) == _minus(v.L, d) else None
    if state is State.COMPETE:
        return ActionId.CHECK_WIN if _count_minus(v.W, d) == _count_minus(v.L, d) else None
    if state is State.WIN:
        return ActionId.CHECK_DONE if _minus(v.R, d) == _minus(v.L, d) else None
    if state is State.UNLOCK:
        return ActionId.CHECK_UNLOCKED if _minus(v.R, d) == _minus(v.L, d) else None
    return None


def priorities_ready(v: NodeVars, d) -> bool:
    return (
        v.phase is Phase.COMPETE
        and _count_minus(v.C, d) == _count_minus(v.P, d)
        and not _minus(v.A, d)
    )


def enabled_action_executions(
    vars: NodeVars,
    inbox: Sequence[Delivery] | Sequence[tuple],
    d_snapshot,
    pending_lock_call: bool = False,
    pending_unlock_call: bool = False,
) -> list[ActionExecution]:
    """Every execution whose guard holds, in a fixed order.

    Order: InitLock/InitUnlock, the initiator Check, CheckPriorities, then
    one Receive per in-transit message in inbox order.
    """
    out = []
    if pending_lock_call and vars.state is State.IDLE:
        out.append(ActionExecution(ActionId.INIT_LOCK))
    if pending_unlock_call and vars.state is State.LOCKED:
        out.append(ActionExecution(ActionId.INIT_UNLOCK))
    check = initiator_check(vars, d_snapshot)
    if check is not None:
        out.append(ActionExecution(check))
    if vars.phase is Phase.COMPETE and priorities_ready(vars, d_snapshot):
        out.append(ActionExecution(ActionId.CHECK_PRIORITIES))
    for item in inbox:
        message, port = item[0], item[1]
        token = item[2] if len(item) > 2 else None
        out.append(ActionExecution(RECEIVE_ACTION[message.kind], message, port, token))
    return out


def _guard_holds(v: NodeVars, action: ActionId, d) -> bool:
    if action is ActionId.CHECK_PRIORITIES:
        return priorities_ready(v, d)
    return initiator_check(v, d) is action


def apply_action(
    vars: NodeVars,
    execution: ActionExecution,
    d_snapshot,
    rng: PriorityStream | None,
    K: int,
    live_ports: Iterable[int] = (),
) -> ActionEffect:
    """Run one action execution and return its effect.

    ``live_ports`` is the node's currently connected real ports; it is only
    read by InitLock, which locks the closed neighborhood. Priorities are
    drawn from ``rng`` via :func:`draw_priority`.
    """
    action = execution.action
    d = d_snapshot
    v = vars.copy()
    sends: list[tuple[Message, int]] = []
    effect = ActionEffect(v, sends)

    if action is ActionId.RECEIVE_SET_LOCK:
        # Lock first, then clean up: a set-lock via a port in D is undone at once.
        port = execution.port
        v.lock = port
        v.C.discard(port)
        _clean_up(v, d, sends)
        effect.cleanup_sends = len(sends)
        sends.append((ACK_LOCK, port))
        _check_single_send(effect)
        return effect

    if action in INITIATOR_CHECKS or action is ActionId.CHECK_PRIORITIES:
        if not _guard_holds(vars, action, d):
            raise ProtocolFault(f"{action.value} executed while its guard is false")
    elif action is ActionId.INIT_LOCK:
        if vars.state is not State.IDLE:
            raise ProtocolFault(f"InitLock executed in state {vars.state.value}")
    elif action is ActionId.INIT_UNLOCK:
        if vars.state is not State.LOCKED:
            raise ProtocolFault(f"InitUnlock executed in state {vars.state.value}")

    _clean_up(v, d, sends)
    effect.cleanup_sends = len(sends)
    port = execution.port

    if action is ActionId.INIT_LOCK:
        effect.lock_call_consumed = True
        v.state = State.PREPARE
        v.L = {SELF_PORT} | set(live_ports)
        for label in sorted(v.L):
            sends.append((PREPARE, label))

    elif action is ActionId.RECEIVE_PREPARE:
        if v.phase is Phase.COMPETE:
            v.H.add(port)
        else:
            v.A.add(port)
            v.phase = Phase.PREPARE
            sends.append((READY, port))

    elif action is ActionId.RECEIVE_READY or action is ActionId.RECEIVE_ACK_LOCK \
            or action is ActionId.RECEIVE_ACK_UNLOCK:
        v.R.add(port)

    elif action is ActionId.CHECK_START:
        v.state = State.COMPETE
        v.R = set()
        v.W = {}
        p = draw_priority(rng, K)
        effect.drew_priority = p
        msg = request_lock(p)
        for label in sorted(v.L):
            sends.append((msg, label))

    elif action is ActionId.RECEIVE_REQUEST:
        if port in v.A:
            v.A.discard(port)
            v.C.add(port)
        v.P[port] = execution.message.payload
        v.phase = Phase.COMPETE

    elif action is ActionId.CHECK_PRIORITIES:
        for label, won in sorted(priority_decision(v.P, v.lock, v.C).items()):
            sends.append((WIN_TRUE if won else WIN_FALSE, label))
        v.P = {}

    elif action is ActionId.RECEIVE_WIN:
        v.W[port] = execution.message.payload

    elif action is ActionId.CHECK_WIN:
        if not all(v.W.values()):
            p = draw_priority(rng, K)
            effect.drew_priority = p
            msg = request_lock(p)
            for label in sorted(v.L):
                sends.append((msg, label))
        else:
            v.state = State.WIN
            v.R = set()
            for label in sorted(v.L):
                sends.append((SET_LOCK, label))
        v.W = {}

    elif action is ActionId.CHECK_DONE:
        v.state = State.LOCKED
        v.R = set()
        effect.returned_lock_set = frozenset(v.L)

    elif action is ActionId.INIT_UNLOCK:
        effect.unlock_call_consumed = True
        v.state = State.UNLOCK
        v.R = set()
        for label in sorted(v.L):
            sends.append((RELEASE_LOCK, label))

    elif action is ActionId.RECEIVE_RELEASE:
        v.lock = None
        sends.append((ACK_UNLOCK, port))

    elif action is ActionId.CHECK_UNLOCKED:
        v.state = State.IDLE
        v.R = set()

    else:  # pragma: no cover
        raise ProtocolFault(f"unknown action {action!r}")

    _check_single_send(effect)
    return effect


def _check_single_send(effect: ActionEffect) -> None:
    # Hold-promotion ready messages from clean-up may share a port with the
    # action body's own send; each part alone sends at most once per port.
    cut = effect.cleanup_sends
    for part in (effect.sends[:cut], effect.sends[cut:]):
        ports = [label for _, label in part]
        if len(ports) != len(set(ports)):
            raise ProtocolFault(f"more than one send per port: {part}")


def doubled_ports(effect: ActionEffect) -> int:
    """Number of ports that received two messages from one execution."""
    ports = [label for _, label in effect.sends]
    return len(ports) - len(set(ports))
