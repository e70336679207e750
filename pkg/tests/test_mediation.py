from __future__ import annotations

import itertools
import json

import pytest

from countersign.errors import (
    AlreadyAnswered,
    ExcludedDevice,
    InvalidSignature,
    MissingAttestation,
    NoOpenRound,
    NotActiveReviewer,
    NotBB2Round,
    NotBB5Round,
    NotInConflict,
    PoolExhausted,
    RoundAlreadyOpen,
    RoundClosed,
    UnknownChallenge,
)
from countersign.events import EventKind
from countersign.identity import Channel
from countersign.mediation import next_runnable_step
from countersign.policy import MediationStep, StepKind
from countersign.workflow import ProposalStatus, RoundOutcome, Verdict

from helpers import Harness


def _conflict(h: Harness, pid="p1", rejecter="bob"):
    h.propose(pid)
    for reviewer in ("alice", "bob", "carol"):
        verdict = "Reject" if reviewer == rejecter else "Approve"
        message = "port 23 open" if reviewer == rejecter else "looks good"
        h.review(reviewer, verdict, message=message, pid=pid)
    assert h.state(pid).status == ProposalStatus.CONFLICT
    return h


# -- BB1: request confirmation ----------------------------------------------------


def test_bb1_kickoff_shares_commit_messages():
    h = _conflict(Harness(strategy=[("BB1", 60000)]))
    requests = h.node.ledger.get_entries(kind=EventKind.CONFIRMATION_REQUESTED)
    assert {e.event.body["reviewer"] for e in requests} == {"alice", "bob", "carol"}
    for entry in requests:
        body = entry.event.body
        rows = json.loads(body["peer_messages"])
        senders = {row["reviewer"] for row in rows}
        assert body["reviewer"] not in senders
        if body["reviewer"] != "bob":
            assert any(row["commit_message"] == "port 23 open" for row in rows)


def test_bb1_single_correction_closes_with_consensus():
    # Prior {A: Approve, B: Reject, C: Approve}; B alone corrects to Approve.
    h = _conflict(Harness(strategy=[("BB1", 60000)]))
    state = h.review("bob", "Approve", message="missed the staging note", round_no=1)
    assert state.status == ProposalStatus.AUTHORIZED
    closed = h.node.ledger.get_entries(kind=EventKind.ROUND_CLOSED)[-1]
    assert closed.event.body["outcome"] == RoundOutcome.CONSENSUS.value
    assert closed.event.body["verdict"] == "Approve"


def test_bb1_unchanged_resubmissions_still_conflict():
    h = _conflict(Harness(strategy=[("BB1", 60000)]))
    h.review("alice", "Approve", round_no=1)
    h.review("bob", "Reject", round_no=1)
    state = h.review("carol", "Approve", round_no=1)
    # strategy exhausted after BB1 -> fail closed
    assert state.status == ProposalStatus.REJECTED
    closed = h.node.ledger.get_entries(kind=EventKind.ROUND_CLOSED)[-1]
    assert closed.event.body["outcome"] == RoundOutcome.STILL_CONFLICTING.value


def test_bb1_wrong_round_number_rejected():
    h = _conflict(Harness(strategy=[("BB1", 60000)]))
    with pytest.raises(RoundClosed):
        h.review("bob", "Approve", round_no=0)
    with pytest.raises(RoundClosed):
        h.review("bob", "Approve", round_no=2)


def test_bb1_deadline_closes_without_consensus():
    h = _conflict(Harness(strategy=[("BB1", 60000)]))
    h.review("bob", "Reject", round_no=1)  # keeps rejecting; others silent
    h.expire_round()
    assert h.state().status == ProposalStatus.REJECTED


def test_inputs_after_deadline_are_rejected():
    h = _conflict(Harness(strategy=[("BB1", 60000), ("BB1", 60000)]))
    deadline = h.open_round().deadline
    h.clock.set(deadline + 1)
    with pytest.raises(RoundClosed):
        h.review("bob", "Approve", round_no=1)
    # the expiry advanced the proposal into round 2
    assert h.state().round == 2


# -- BB2: second-channel confirmation ------------------------------------------------


def _bb2_conflict(strategy=(("BB2", 60000),), **kwargs):
    return _conflict(Harness(strategy=list(strategy), **kwargs), rejecter="carol")


def _challenge_of(h, reviewer, pid="p1"):
    for challenge in h.node.open_challenges():
        if challenge.reviewer == reviewer and challenge.proposal_id == pid:
            return challenge
    return None


def test_bb2_one_challenge_per_decided_reviewer():
    h = _bb2_conflict()
    challenges = h.node.open_challenges()
    # Oracle: challenges <-> questioned decisions form a bijection.
    assert {c.reviewer for c in challenges} == {"alice", "bob", "carol"}
    assert len({c.nonce for c in challenges}) == 3
    for challenge in challenges:
        assert challenge.questioned_round == 0


def test_bb2_deny_voids_excludes_and_authorizes():
    # Compromised device rejected a valid config; the reviewer denies it.
    h = _bb2_conflict()
    h["alice"].respond_challenge(_challenge_of(h, "alice").challenge_id, "confirm")
    h["bob"].respond_challenge(_challenge_of(h, "bob").challenge_id, "confirm")
    state = h["carol"].respond_challenge(_challenge_of(h, "carol").challenge_id, "deny")
    assert state.status == ProposalStatus.AUTHORIZED
    assert state.excluded_devices == {"carol"}
    record = h.node.store.record("p1")
    voided = [d for d in record.decisions if d.voided]
    assert len(voided) == 1 and voided[0].reviewer == "carol"
    excluded_events = h.node.ledger.get_entries(kind=EventKind.REVIEWER_EXCLUDED)
    assert len(excluded_events) == 1


def test_bb2_all_confirm_still_conflicting():
    h = _bb2_conflict(strategy=[("BB2", 60000), ("BB1", 60000)])
    for reviewer in ("alice", "bob", "carol"):
        h[reviewer].respond_challenge(_challenge_of(h, reviewer).challenge_id, "confirm")
    state = h.state()
    assert state.status == ProposalStatus.CONFLICT
    assert state.round == 2  # moved on to the BB1 step


def test_bb2_response_with_primary_key_rejected():
    from countersign import signing

    h = _bb2_conflict()
    challenge = _challenge_of(h, "carol")
    payload = signing.challenge_response_message(challenge.challenge_id,
                                                 challenge.nonce, "deny")
    primary_sig = h["carol"].keystore.sign(Channel.PRIMARY, payload)
    with pytest.raises(InvalidSignature):
        h.node.respond_challenge(challenge.challenge_id, "deny", primary_sig)


def test_bb2_double_answer_and_unknown_challenge():
    h = _bb2_conflict()
    challenge = _challenge_of(h, "alice")
    h["alice"].respond_challenge(challenge.challenge_id, "confirm")
    with pytest.raises(AlreadyAnswered):
        h["alice"].respond_challenge(challenge.challenge_id, "deny")
    with pytest.raises(UnknownChallenge):
        h.node.respond_challenge("ghost-challenge", "confirm", b"\x00" * 64)


def test_bb2_timeout_counts_as_deny():
    h = _bb2_conflict(strategy=[("BB2", 60000)])
    h["alice"].respond_challenge(_challenge_of(h, "alice").challenge_id, "confirm")
    h["bob"].respond_challenge(_challenge_of(h, "bob").challenge_id, "confirm")
    h.expire_round()  # carol never answers
    state = h.state()
    assert state.excluded_devices == {"carol"}
    assert state.status == ProposalStatus.AUTHORIZED
    answers = h.node.ledger.get_entries(kind=EventKind.CHALLENGE_ANSWERED)
    assert [e.event.body["answer"] for e in answers] == ["confirm", "confirm", "timeout"]


def test_bb2_issue_on_wrong_round_kind():
    h = _conflict(Harness(strategy=[("BB1", 60000)]))
    with pytest.raises(NotBB2Round):
        h.node.bb2_issue_challenges("p1")


def test_bb2_floor_violation_rejects_without_pool():
    # Two reviewers, one excluded -> 1 < floor 2, no BB3 -> Rejected.
    h = Harness(reviewers=("alice", "bob"), strategy=[("BB2", 60000)])
    h.propose()
    h.review("alice", "Approve")
    h.review("bob", "Reject")
    h["alice"].respond_challenge(_challenge_of(h, "alice").challenge_id, "confirm")
    state = h["bob"].respond_challenge(_challenge_of(h, "bob").challenge_id, "deny")
    assert state.status == ProposalStatus.REJECTED
    closed = h.node.ledger.get_entries(kind=EventKind.ROUND_CLOSED)[-1]
    assert closed.event.body["outcome"] == RoundOutcome.BELOW_REVIEWER_FLOOR.value


# -- BB3: additional reviewers ---------------------------------------------------------


def test_bb3_adds_pool_reviewers_in_order():
    h = Harness(strategy=[("BB3", 60000, 1)], pool=("dora", "emil"))
    _conflict(h)
    state = h.state()
    assert state.round == 1
    assert "dora" in state.active_reviewers and "emil" not in state.active_reviewers
    # the fresh reviewer decides; carried verdicts make it 3 approve vs 1 reject
    h.review("dora", "Reject", message="agree with bob, port 23", round_no=1)
    h.review("alice", "Reject", round_no=1)
    state = h.review("carol", "Reject", round_no=1)
    assert state.status == ProposalStatus.REJECTED


def test_bb3_pool_exhausted_on_direct_call():
    h = Harness(strategy=[("BB3", 60000, 1), ("BB3", 60000, 1)], pool=("dora",))
    _conflict(h)
    assert "dora" in h.state().active_reviewers
    with pytest.raises(PoolExhausted):
        h.node.bb3_add_reviewers("p1")


def test_bb3_new_reviewer_messages_visible_in_later_bb1():
    h = Harness(strategy=[("BB3", 60000, 1), ("BB1", 60000)], pool=("dora",))
    _conflict(h)
    h.review("dora", "Reject", message="telnet really is enabled", round_no=1)
    h.review("alice", "Approve", round_no=1)
    h.review("bob", "Reject", round_no=1)
    h.review("carol", "Approve", round_no=1)
    assert h.state().round == 2
    requests = [
        e for e in h.node.ledger.get_entries(kind=EventKind.CONFIRMATION_REQUESTED)
        if e.event.body["round"] == 2 and e.event.body["reviewer"] == "alice"
    ]
    rows = json.loads(requests[0].event.body["peer_messages"])
    assert any(r["reviewer"] == "dora" and "telnet" in r["commit_message"] for r in rows)


def test_bb3_skipped_when_pool_cannot_cover():
    # Auto-advance skips a BB3 step whose pool is too small, failing closed.
    h = Harness(strategy=[("BB3", 60000, 2)], pool=("dora", "emil"))
    h.propose()
    h.review("alice", "Approve")
    h.review("bob", "Reject")
    h.review("carol", "Approve")
    assert h.state().round == 1  # 2 <= pool, so it runs
    # with the pool drafted, a further BB3 step is no longer runnable
    record = h.node.store.record("p1")
    assert next_runnable_step(h.policies.policies[0], 1, record) is None


# -- BB4: chat ---------------------------------------------------------------------------


def _bb4_conflict(**kwargs):
    return _conflict(Harness(strategy=[("BB4", 60000)], **kwargs))


def test_bb4_chat_and_unanimous_commitments():
    h = _bb4_conflict()
    h["bob"].chat("p1", 1, "the diff opens port 23, see line 12")
    h["alice"].chat("p1", 1, "confirmed, retracting my approval")
    for reviewer in ("alice", "bob"):
        h[reviewer].commit_group_decision("p1", 1, Verdict.REJECT)
    state = h["carol"].commit_group_decision("p1", 1, Verdict.REJECT)
    assert state.status == ProposalStatus.REJECTED


def test_bb4_disagreeing_commitments_still_conflict():
    h = _bb4_conflict()
    h["alice"].commit_group_decision("p1", 1, Verdict.APPROVE)
    h["bob"].commit_group_decision("p1", 1, Verdict.REJECT)
    state = h["carol"].commit_group_decision("p1", 1, Verdict.APPROVE)
    assert state.status == ProposalStatus.REJECTED  # exhausted after BB4
    closed = h.node.ledger.get_entries(kind=EventKind.ROUND_CLOSED)[-1]
    assert closed.event.body["outcome"] == RoundOutcome.STILL_CONFLICTING.value


def test_bb4_excluded_reviewer_cannot_chat():
    # Four reviewers so the surviving verdicts stay mixed after the exclusion.
    h = Harness(reviewers=("alice", "bob", "carol", "dave"),
                strategy=[("BB2", 60000), ("BB4", 60000)])
    h.propose()
    h.review("alice", "Approve")
    h.review("bob", "Reject")
    h.review("carol", "Reject")
    h.review("dave", "Approve")
    for reviewer in ("alice", "bob", "dave"):
        h[reviewer].respond_challenge(_challenge_of(h, reviewer).challenge_id, "confirm")
    h["carol"].respond_challenge(_challenge_of(h, "carol").challenge_id, "deny")
    assert h.state().round == 2
    assert h.open_round().step_kind == "BB4"
    with pytest.raises(NotActiveReviewer):
        h["carol"].chat("p1", 2, "let me back in")


def test_bb4_chat_order_is_ledger_order():
    h = _bb4_conflict()
    expected = []
    for i in range(10):
        author = "alice" if i % 2 == 0 else "bob"
        text = f"message {i}"
        h[author].chat("p1", 1, text)
        expected.append((author, text))
    assert h.node.store.chat[("p1", 1)] == expected
    ledger_order = [
        (e.event.body["author"], e.event.body["text"])
        for e in h.node.ledger.get_entries(kind=EventKind.CHAT_MESSAGE)
    ]
    assert ledger_order == expected


def test_bb4_commitment_supersession():
    h = _bb4_conflict()
    h["alice"].commit_group_decision("p1", 1, Verdict.APPROVE)
    h["alice"].commit_group_decision("p1", 1, Verdict.REJECT)  # latest wins
    h["bob"].commit_group_decision("p1", 1, Verdict.REJECT)
    state = h["carol"].commit_group_decision("p1", 1, Verdict.REJECT)
    assert state.status == ProposalStatus.REJECTED
    closed = h.node.ledger.get_entries(kind=EventKind.ROUND_CLOSED)[-1]
    assert closed.event.body["outcome"] == RoundOutcome.CONSENSUS.value


def test_bb4_deadline_with_missing_commitments():
    h = _bb4_conflict()
    h["alice"].commit_group_decision("p1", 1, Verdict.APPROVE)
    h.expire_round()
    assert h.state().status == ProposalStatus.REJECTED  # exhausted, fail closed


# -- BB5: in-person meeting -----------------------------------------------------------


def _bb5_conflict(**kwargs):
    return _conflict(Harness(strategy=[("BB5", 60000)], **kwargs))


def test_bb5_token_flow():
    h = _bb5_conflict()
    token = h.node.meeting_token("p1")
    assert token is not None and len(token) == 16
    for reviewer in ("alice", "bob"):
        h[reviewer].commit_group_decision("p1", 1, Verdict.APPROVE, token)
    state = h["carol"].commit_group_decision("p1", 1, Verdict.APPROVE, token)
    assert state.status == ProposalStatus.AUTHORIZED


def test_bb5_commitment_without_token():
    h = _bb5_conflict()
    with pytest.raises(MissingAttestation):
        h["alice"].commit_group_decision("p1", 1, Verdict.APPROVE)


def test_bb5_stale_token_rejected():
    h = Harness(strategy=[("BB5", 60000), ("BB5", 60000)])
    _conflict(h)
    first = h.node.meeting_token("p1")
    h.expire_round()  # nobody commits; move to the second BB5 round
    assert h.state().round == 2
    second = h.node.meeting_token("p1")
    assert second != first
    with pytest.raises(MissingAttestation):
        h["alice"].commit_group_decision("p1", 2, Verdict.APPROVE, first)
    h["alice"].commit_group_decision("p1", 2, Verdict.APPROVE, second)


def test_bb5_tokens_unique_across_rounds_and_proposals():
    h = Harness(strategy=[("BB5", 60000), ("BB5", 60000), ("BB5", 60000)])
    _conflict(h)
    tokens = set()
    for _ in range(3):
        tokens.add(h.node.meeting_token("p1"))
        h.expire_round()
    assert len(tokens) == 3


def test_bb5_register_meeting_requires_bb5_round():
    h = _bb4_conflict()
    with pytest.raises(NotBB5Round):
        h.node.bb5_register_meeting("p1")


# -- round mechanics --------------------------------------------------------------------


def test_open_round_guards():
    h = _conflict(Harness(strategy=[("BB1", 60000)]))
    with pytest.raises(RoundAlreadyOpen):
        h.node.open_round("p1", MediationStep(StepKind.BB1, 1000))
    h2 = Harness()
    h2.propose()
    h2.review("alice", "Approve")
    h2.review("bob", "Approve")
    h2.review("carol", "Approve")
    with pytest.raises(NotInConflict):
        h2.node.open_round("p1", MediationStep(StepKind.BB1, 1000))


def test_manual_open_round_without_auto_advance():
    h = Harness(strategy=[("BB1", 60000)], auto_advance=False)
    h.propose()
    h.review("alice", "Approve")
    h.review("bob", "Reject")
    h.review("carol", "Approve")
    assert h.state().status == ProposalStatus.CONFLICT
    assert h.open_round() is None
    opened = h.node.open_round("p1", MediationStep(StepKind.BB1, 60000))
    assert opened.round == 1 and opened.step_kind == "BB1"


def test_close_round_requires_condition_or_deadline():
    from countersign.errors import IncompleteRound

    h = _conflict(Harness(strategy=[("BB4", 60000)]))
    with pytest.raises(IncompleteRound):
        h.node.close_round("p1")
    h["alice"].commit_group_decision("p1", 1, Verdict.REJECT)
    h["bob"].commit_group_decision("p1", 1, Verdict.REJECT)
    h["carol"].commit_group_decision("p1", 1, Verdict.REJECT)
    with pytest.raises(NoOpenRound):
        h.node.close_round("p1")


def test_round_numbers_strictly_increasing_gapless():
    h = Harness(strategy=[("BB1", 60000), ("BB2", 60000), ("BB4", 60000)])
    _conflict(h)
    while h.state().status == ProposalStatus.CONFLICT:
        h.expire_round()
    opened = [e.event.body["round"]
              for e in h.node.ledger.get_entries(kind=EventKind.ROUND_OPENED)]
    assert opened == list(range(1, len(opened) + 1))


def test_closure_soundness_brute_force():
    # Consensus(v) iff every participating reviewer's effective verdict is v,
    # checked against direct enumeration for 2..4 reviewers.
    names = ("r1", "r2", "r3", "r4")
    for k in (2, 3, 4):
        reviewers = names[:k]
        for i, vector in enumerate(itertools.product((Verdict.APPROVE, Verdict.REJECT),
                                                      repeat=k)):
            h = Harness(reviewers=reviewers, strategy=[("BB1", 60000)], seed=100 + i)
            h.propose("pz")
            # force a conflict in round 0 unless the vector is already mixed
            seed_vector = [Verdict.APPROVE] * (k - 1) + [Verdict.REJECT]
            for reviewer, verdict in zip(reviewers, seed_vector):
                h.review(reviewer, verdict, pid="pz")
            assert h.state("pz").status == ProposalStatus.CONFLICT
            for reviewer, verdict in zip(reviewers, vector):
                if h.open_round("pz") is None:
                    break
                h.review(reviewer, verdict, pid="pz", round_no=1)
            closed = h.node.ledger.get_entries(proposal_id="pz",
                                               kind=EventKind.ROUND_CLOSED)
            if not closed:
                continue
            body = closed[-1].event.body
            record = h.node.store.record("pz")
            from countersign.workflow import effective_verdicts
            verdicts = effective_verdicts(record)
            unanimous = len(set(verdicts.values())) == 1 and None not in verdicts.values()
            if body["outcome"] == RoundOutcome.CONSENSUS.value:
                assert unanimous
                assert all(v.value == body["verdict"] for v in verdicts.values())
            else:
                assert not unanimous or body["round"] != 1


def test_termination_within_strategy_bound():
    # Persistent disagreement must terminate in at most len(strategy)+1 rounds.
    kinds = ["BB1", "BB2", "BB4", "BB5"]
    for length in (0, 1, 2):
        for combo in itertools.product(kinds, repeat=length):
            h = Harness(strategy=[(k, 60000) for k in combo], seed=7)
            h.propose()
            h.review("alice", "Approve")
            h.review("bob", "Reject")
            h.review("carol", "Approve")
            iterations = 0
            while h.state().status == ProposalStatus.CONFLICT:
                h.expire_round()
                iterations += 1
                assert iterations <= length + 1
            assert h.state().status == ProposalStatus.REJECTED
            opened = h.node.ledger.get_entries(kind=EventKind.ROUND_OPENED)
            assert len(opened) <= length


def test_voided_decision_never_counts_again():
    # After a deny, the voided rejection must not influence any later round.
    h = Harness(strategy=[("BB2", 60000), ("BB1", 60000)])
    _conflict(h, rejecter="carol")
    for reviewer in ("alice", "bob"):
        h[reviewer].respond_challenge(_challenge_of(h, reviewer).challenge_id, "confirm")
    h["carol"].respond_challenge(_challenge_of(h, "carol").challenge_id, "deny")
    assert h.state().status == ProposalStatus.AUTHORIZED
    record = h.node.store.record("p1")
    from countersign.workflow import effective_verdicts
    assert "carol" not in effective_verdicts(record)


def test_excluded_reviewer_reenters_via_second_channel():
    # The device stays excluded, but the reviewer herself may decide again
    # over the second channel and then counts toward closure.
    h = Harness(reviewers=("alice", "bob", "carol", "dave"),
                strategy=[("BB2", 60000), ("BB1", 60000)])
    h.propose()
    h.review("alice", "Approve")
    h.review("bob", "Reject")
    h.review("carol", "Reject")
    h.review("dave", "Approve")
    for reviewer in ("alice", "bob", "dave"):
        h[reviewer].respond_challenge(_challenge_of(h, reviewer).challenge_id, "confirm")
    h["carol"].respond_challenge(_challenge_of(h, "carol").challenge_id, "deny")
    state = h.state()
    assert state.round == 2 and state.excluded_devices == {"carol"}

    with pytest.raises(ExcludedDevice):
        h.review("carol", "Reject", round_no=2)  # primary device stays out
    h.review("carol", "Reject", round_no=2, channel=Channel.SECOND)
    record = h.node.store.record("p1")
    from countersign.workflow import participating_reviewers
    assert "carol" in participating_reviewers(record)

    h.review("alice", "Reject", round_no=2)
    h.review("bob", "Reject", round_no=2)
    assert h.state().status == ProposalStatus.CONFLICT  # dave still approves
    state = h.review("dave", "Reject", round_no=2)
    assert state.status == ProposalStatus.REJECTED
    assert state.excluded_devices == {"carol"}
