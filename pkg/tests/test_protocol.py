from __future__ import annotations

import random

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from dynlock.core import (
    ACK_LOCK,
    ACK_UNLOCK,
    PREPARE,
    READY,
    RELEASE_LOCK,
    SET_LOCK,
    WIN_FALSE,
    WIN_TRUE,
    MsgKind,
    NodeVars,
    Phase,
    State,
    new_node_vars,
    request_lock,
)
from dynlock.protocol import (
    INITIATOR_CHECKS,
    ActionExecution,
    ActionId,
    Delivery,
    ProtocolFault,
    Role,
    apply_action,
    clean_up,
    draw_priority,
    enabled_action_executions,
    priority_decision,
)

DELTA = 3


def receive(action: ActionId, message, port: int) -> ActionExecution:
    return ActionExecution(action, message, port)


# -- clean_up -------------------------------------------------------------------

def test_clean_up_releases_lock_of_disconnected_port():
    v = NodeVars(lock=2, L={1, 2})
    out = clean_up(v, {2}).vars_after
    assert out.lock is None and out.L == {1}


def test_clean_up_promotes_holds_when_no_candidates():
    v = NodeVars(H={3})
    eff = clean_up(v, set())
    assert eff.sends == [(READY, 3)]
    assert eff.vars_after.A == {3} and not eff.vars_after.H
    assert eff.vars_after.phase is Phase.PREPARE


def test_clean_up_keeps_holds_while_candidates_remain():
    v = NodeVars(C={1}, H={3}, phase=Phase.COMPETE)
    eff = clean_up(v, set())
    assert eff.vars_after == v and eff.sends == []


def test_clean_up_does_not_mutate_input():
    v = NodeVars(lock=1, L={0, 1}, H={2})
    before = v.copy()
    clean_up(v, {1})
    assert v == before


# -- enabled executions ------------------------------------------------------------

def test_fresh_node_has_nothing_enabled():
    assert enabled_action_executions(new_node_vars(DELTA), [], frozenset()) == []


def test_prepare_with_all_readies_enables_only_check_start():
    v = NodeVars(state=State.PREPARE, L={0, 1}, R={0, 1})
    assert enabled_action_executions(v, [], frozenset()) == [ActionExecution(ActionId.CHECK_START)]


def test_saturated_inbox_stays_within_bound():
    # Two messages from each of the 3 neighbors and from the self-port,
    # plus an initiator Check and CheckPriorities.
    v = NodeVars(state=State.PREPARE, phase=Phase.COMPETE, L={0, 1, 2, 3}, R={0, 1, 2, 3})
    inbox = [Delivery(m, p) for p in range(DELTA + 1) for m in (READY, WIN_FALSE)]
    execs = enabled_action_executions(v, inbox, frozenset())
    assert len(execs) == 2 * DELTA + 4


def test_init_lock_needs_idle_state_and_pending_call():
    v = new_node_vars(DELTA)
    assert enabled_action_executions(v, [], frozenset(), pending_lock_call=True) == [ActionExecution(ActionId.INIT_LOCK)]
    busy = NodeVars(state=State.COMPETE, L={0})
    assert ActionExecution(ActionId.INIT_LOCK) not in enabled_action_executions(busy, [], frozenset(), True)


def test_guards_ignore_disconnected_ports():
    v = NodeVars(state=State.WIN, L={0, 1, 2}, R={0, 1})
    assert enabled_action_executions(v, [], frozenset()) == []
    assert enabled_action_executions(v, [], frozenset({2})) == [ActionExecution(ActionId.CHECK_DONE)]


def test_check_priorities_waits_for_applicants():
    v = NodeVars(phase=Phase.COMPETE, C={1}, P={1: 3}, A={2})
    assert ActionExecution(ActionId.CHECK_PRIORITIES) not in enabled_action_executions(v, [], frozenset())
    assert ActionExecution(ActionId.CHECK_PRIORITIES) in enabled_action_executions(v, [], frozenset({2}))


def test_execution_rejects_mismatched_message():
    with pytest.raises(ValueError):
        ActionExecution(ActionId.RECEIVE_WIN, READY, 1)
    with pytest.raises(ValueError):
        ActionExecution(ActionId.CHECK_START, READY, 1)
    with pytest.raises(ValueError):
        ActionExecution(ActionId.RECEIVE_READY)


# -- action bodies -----------------------------------------------------------------

def test_init_lock_prepares_closed_neighborhood():
    eff = apply_action(new_node_vars(2), ActionExecution(ActionId.INIT_LOCK), frozenset(), None, 4, [1, 2])
    assert eff.vars_after.state is State.PREPARE
    assert eff.vars_after.L == {0, 1, 2}
    assert eff.sends == [(PREPARE, 0), (PREPARE, 1), (PREPARE, 2)]
    assert eff.lock_call_consumed


def test_prepare_while_competing_is_held():
    v = NodeVars(phase=Phase.COMPETE, C={1}, P={})
    eff = apply_action(v, receive(ActionId.RECEIVE_PREPARE, PREPARE, 3), frozenset(), None, 4)
    assert eff.vars_after.H == {3} and eff.sends == []


def test_prepare_while_idle_makes_applicant():
    eff = apply_action(NodeVars(), receive(ActionId.RECEIVE_PREPARE, PREPARE, 3), frozenset(), None, 4)
    assert eff.vars_after.A == {3} and eff.vars_after.phase is Phase.PREPARE
    assert eff.sends == [(READY, 3)]


def test_set_lock_locks_and_acknowledges():
    v = NodeVars(phase=Phase.COMPETE, C={2, 3})
    eff = apply_action(v, receive(ActionId.RECEIVE_SET_LOCK, SET_LOCK, 2), frozenset(), None, 4)
    assert eff.vars_after.lock == 2 and eff.vars_after.C == {3}
    assert eff.sends == [(ACK_LOCK, 2)]


def test_set_lock_on_disconnected_port_is_released_by_clean_up():
    v = NodeVars(phase=Phase.COMPETE, C={2})
    eff = apply_action(v, receive(ActionId.RECEIVE_SET_LOCK, SET_LOCK, 2), frozenset({2}), None, 4)
    assert eff.vars_after.lock is None


def test_release_unlocks_and_acknowledges():
    eff = apply_action(NodeVars(lock=1), receive(ActionId.RECEIVE_RELEASE, RELEASE_LOCK, 1), frozenset(), None, 4)
    assert eff.vars_after.lock is None and eff.sends == [(ACK_UNLOCK, 1)]


def test_request_moves_applicant_to_candidate():
    v = NodeVars(phase=Phase.PREPARE, A={1})
    eff = apply_action(v, receive(ActionId.RECEIVE_REQUEST, request_lock(5), 1), frozenset(), None, 4)
    out = eff.vars_after
    assert out.C == {1} and not out.A and out.P == {1: 5} and out.phase is Phase.COMPETE


def test_losing_check_win_draws_again():
    v = NodeVars(state=State.COMPETE, L={0, 1}, W={0: True, 1: False})
    rng = random.Random(3)
    eff = apply_action(v, ActionExecution(ActionId.CHECK_WIN), frozenset(), rng, 8)
    p = random.Random(3).randrange(8)
    assert eff.drew_priority == p
    assert eff.sends == [(request_lock(p), 0), (request_lock(p), 1)]
    assert eff.vars_after.state is State.COMPETE and not eff.vars_after.W


def test_winning_check_win_sends_set_lock():
    v = NodeVars(state=State.COMPETE, L={0, 1}, W={0: True, 1: True}, R={0})
    eff = apply_action(v, ActionExecution(ActionId.CHECK_WIN), frozenset(), random.Random(0), 8)
    assert eff.vars_after.state is State.WIN and not eff.vars_after.R
    assert eff.sends == [(SET_LOCK, 0), (SET_LOCK, 1)]
    assert eff.drew_priority is None


def test_check_done_returns_lock_set():
    v = NodeVars(state=State.WIN, L={0, 2}, R={0, 2})
    eff = apply_action(v, ActionExecution(ActionId.CHECK_DONE), frozenset(), None, 8)
    assert eff.vars_after.state is State.LOCKED
    assert eff.returned_lock_set == frozenset({0, 2})


def test_guarded_action_with_false_guard_faults():
    with pytest.raises(ProtocolFault):
        apply_action(NodeVars(state=State.PREPARE, L={0}), ActionExecution(ActionId.CHECK_START),
                     frozenset(), random.Random(0), 4)
    with pytest.raises(ProtocolFault):
        apply_action(NodeVars(state=State.LOCKED), ActionExecution(ActionId.INIT_LOCK), frozenset(), None, 4)


# -- priorities ------------------------------------------------------------------------

@pytest.mark.parametrize(
    "P, lock, C, expected",
    [
        ({1: 5, 2: 3}, None, {1, 2}, {1: True, 2: False}),
        ({1: 4, 2: 4}, None, {1, 2}, {1: False, 2: False}),
        ({1: 7}, 3, {1}, {1: False}),
    ],
)
def test_priority_decision_examples(P, lock, C, expected):
    assert priority_decision(P, lock, C) == expected


def test_draw_priority_singleton_support():
    rng = random.Random(1)
    assert {draw_priority(rng, 1) for _ in range(50)} == {0}


def test_draw_priority_mean_for_k36():
    rng = random.Random("k36")
    draws = [draw_priority(rng, 36) for _ in range(100_000)]
    assert set(draws) <= set(range(36))
    assert abs(sum(draws) / len(draws) - 17.5) <= 0.175


def test_draw_priority_is_reproducible():
    a, b = random.Random(9), random.Random(9)
    assert [draw_priority(a, 16) for _ in range(100)] == [draw_priority(b, 16) for _ in range(100)]


@pytest.mark.parametrize("K", [0, -2, True])
def test_draw_priority_rejects_bad_k(K):
    with pytest.raises(ValueError):
        draw_priority(random.Random(0), K)


# -- properties --------------------------------------------------------------------------

ports = st.integers(0, DELTA)
real_ports = st.integers(1, DELTA)


@st.composite
def structured_vars(draw):
    """Variables that respect the hold/applicant/candidate partition."""
    role_of = draw(st.dictionaries(ports, st.sampled_from("HAC"), max_size=DELTA + 1))
    C = {p for p, r in role_of.items() if r == "C"}
    L = draw(st.sets(ports))
    return NodeVars(
        lock=draw(st.none() | ports),
        state=draw(st.sampled_from(list(State))),
        phase=draw(st.sampled_from(list(Phase))),
        L=L,
        R=draw(st.sets(ports)),
        H={p for p, r in role_of.items() if r == "H"},
        A={p for p, r in role_of.items() if r == "A"},
        C=C,
        W=draw(st.dictionaries(st.sampled_from(sorted(L)) if L else st.nothing(), st.booleans())),
        P=draw(st.dictionaries(st.sampled_from(sorted(C)) if C else st.nothing(), st.integers(0, 15))),
    )


messages = st.sampled_from([PREPARE, READY, SET_LOCK, ACK_LOCK, RELEASE_LOCK, ACK_UNLOCK, WIN_TRUE, WIN_FALSE,
                            request_lock(0), request_lock(7)])
inboxes = st.lists(st.tuples(messages, ports).map(lambda t: Delivery(*t)), max_size=6)
detectors = st.frozensets(real_ports)


@given(structured_vars(), detectors)
def test_clean_up_is_idempotent(v, d):
    once = clean_up(v, d).vars_after
    assert clean_up(once, d).vars_after == clean_up(once, frozenset()).vars_after


@given(structured_vars())
def test_clean_up_without_disconnects_is_identity_while_competing(v):
    assume(v.C)
    assert clean_up(v, frozenset()).vars_after == v


@given(structured_vars(), inboxes, detectors, st.booleans(), st.booleans())
def test_at_most_one_initiator_check(v, inbox, d, plock, punlock):
    execs = enabled_action_executions(v, inbox, d, plock, punlock)
    assert sum(ex.action in INITIATOR_CHECKS for ex in execs) <= 1
    assert len(execs) <= len(inbox) + 3


@settings(max_examples=300)
@given(structured_vars(), inboxes, detectors, st.booleans(), st.booleans(), st.data())
def test_enabled_executions_respect_roles_and_sends(v, inbox, d, plock, punlock, data):
    execs = enabled_action_executions(v, inbox, d, plock, punlock)
    assume(execs)
    ex = data.draw(st.sampled_from(execs))
    eff = apply_action(v, ex, d, random.Random(0), 16, [p for p in range(1, DELTA + 1) if p not in d])
    cleaned = clean_up(v, d).vars_after
    out = eff.vars_after
    body = eff.sends[eff.cleanup_sends:]
    assert len({p for _, p in body}) == len(body)
    if ex.action.role is Role.INITIATOR:
        assert (out.H, out.A, out.C, out.P, out.lock) == (cleaned.H, cleaned.A, cleaned.C, cleaned.P, cleaned.lock)
    elif ex.action is not ActionId.RECEIVE_SET_LOCK:
        assert (out.state, out.W, out.L, out.R) == (cleaned.state, cleaned.W, cleaned.L, cleaned.R)
    else:
        assert (out.state, out.W) == (v.state, {k: b for k, b in v.W.items() if k not in d})


@given(structured_vars(), detectors)
def test_check_priorities_answers_every_live_candidate(v, d):
    v.phase = Phase.COMPETE
    v.A = set()
    v.P = {p: 3 + p for p in v.C}
    assume(ActionExecution(ActionId.CHECK_PRIORITIES) in enabled_action_executions(v, [], d))
    eff = apply_action(v, ActionExecution(ActionId.CHECK_PRIORITIES), d, None, 16)
    wins = [m for m, _ in eff.sends[eff.cleanup_sends:] if m.kind is MsgKind.WIN]
    assert len(wins) == len(v.C - d)
    assert sum(m.payload for m in wins) <= 1
    assert eff.vars_after.P == {}
