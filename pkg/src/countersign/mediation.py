"""Round-closure rules and strategy stepping for conflict mediation.

Pure functions over the state store: the engine asks after every input and
at every deadline whether the open round can close and with what outcome.
Consensus requires every participating reviewer's effective verdict (or
committed group decision) to agree; anything less keeps the conflict alive.
"""

from __future__ import annotations

import json

from .policy import EXHAUSTED, MediationStep, Policy, StepKind, next_mediation_step
from .workflow import (
    CommitmentRecord,
    ProposalRecord,
    RoundOutcome,
    Verdict,
    effective_decision,
    effective_verdicts,
    participating_reviewers,
)

DECISION_STEPS = frozenset({StepKind.BB1, StepKind.BB3})
COMMITMENT_STEPS = frozenset({StepKind.BB4, StepKind.BB5})


def below_floor(record: ProposalRecord, policy: Policy) -> bool:
    return len(participating_reviewers(record)) < policy.min_active_reviewers


def consensus_over_verdicts(record: ProposalRecord) -> tuple[RoundOutcome, Verdict | None]:
    """Outcome from effective verdicts alone (BB1/BB2/BB3 closes)."""
    verdicts = effective_verdicts(record)
    values = set(verdicts.values())
    if verdicts and None not in values and len(values) == 1:
        return RoundOutcome.CONSENSUS, values.pop()
    return RoundOutcome.STILL_CONFLICTING, None


def decision_round_progress(
    record: ProposalRecord, round_no: int
) -> tuple[RoundOutcome, Verdict | None] | None:
    """BB1/BB3: close as soon as effective verdicts agree, or once every
    participant has spoken this round and they still disagree."""
    participants = participating_reviewers(record)
    if not participants:
        return None
    outcome, verdict = consensus_over_verdicts(record)
    if outcome == RoundOutcome.CONSENSUS:
        return outcome, verdict
    spoke_this_round = {
        d.reviewer for d in record.decisions if d.round == round_no and not d.voided
    }
    if participants <= spoke_this_round:
        return RoundOutcome.STILL_CONFLICTING, None
    return None


def commitment_round_progress(
    record: ProposalRecord, commitments: dict[str, CommitmentRecord]
) -> tuple[RoundOutcome, Verdict | None] | None:
    """BB4/BB5: close only when every participant has committed."""
    participants = participating_reviewers(record)
    if not participants or not participants <= set(commitments):
        return None
    values = {commitments[r].verdict for r in participants}
    if len(values) == 1:
        return RoundOutcome.CONSENSUS, values.pop()
    return RoundOutcome.STILL_CONFLICTING, None


def deadline_outcome(
    record: ProposalRecord,
    step_kind: StepKind,
    commitments: dict[str, CommitmentRecord],
) -> tuple[RoundOutcome, Verdict | None]:
    """Forced close at the recorded deadline; missing input never authorizes."""
    if step_kind in COMMITMENT_STEPS:
        progress = commitment_round_progress(record, commitments)
        return progress if progress else (RoundOutcome.STILL_CONFLICTING, None)
    return consensus_over_verdicts(record)


def next_runnable_step(
    policy: Policy, start_index: int, record: ProposalRecord
) -> tuple[int, MediationStep] | None:
    """First strategy step at or after start_index that can actually run.

    Below the reviewer floor only BB3 may run; a BB3 step itself needs
    enough unused pool members. Returns None when the strategy is exhausted,
    which the engine maps to Rejected (fail closed).
    """
    floor_blocked = below_floor(record, policy)
    index = start_index
    while True:
        step = next_mediation_step(policy, index)
        if step is EXHAUSTED:
            return None
        if step.kind == StepKind.BB3:
            if len(available_pool(policy, record)) >= step.add_count:
                return index, step
        elif not floor_blocked:
            return index, step
        index += 1


def available_pool(policy: Policy, record: ProposalRecord) -> list[str]:
    """Stand-by reviewers not yet drafted and not excluded, in pool order."""
    state = record.state
    return [
        r for r in policy.reviewer_pool
        if r not in state.active_reviewers and r not in state.excluded_devices
    ]


def peer_commit_messages(record: ProposalRecord, reviewer: str) -> str:
    """What a reviewer is shown in a confirmation round: the other
    participants' current verdicts and commit messages, as compact JSON."""
    rows = []
    for other in sorted(participating_reviewers(record)):
        if other == reviewer:
            continue
        decision = effective_decision(record, other)
        if decision is None:
            continue
        rows.append({
            "reviewer": other,
            "verdict": decision.verdict.value,
            "commit_message": decision.commit_message,
        })
    return json.dumps(rows, sort_keys=True, separators=(",", ":"))
