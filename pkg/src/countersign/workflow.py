"""Proposal lifecycle state, event-sourced.

All state in this module is derived purely by folding committed ledger
events through StateStore.apply; the engine validates commands against the
store, appends events, and applies them. Replaying an exported ledger
therefore reconstructs exactly the states the live system held.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field as dc_field
from enum import Enum

from .errors import SchemaViolation, UnknownProposal
from .events import Event
from .identity import Actor, KeyRecord, Registry, Role


class ProposalStatus(str, Enum):
    PROPOSED = "Proposed"
    UNDER_REVIEW = "UnderReview"
    CONFLICT = "Conflict"
    AUTHORIZED = "Authorized"
    REJECTED = "Rejected"
    DEPLOYED = "Deployed"


class Verdict(str, Enum):
    APPROVE = "Approve"
    REJECT = "Reject"


TERMINAL_STATUSES = frozenset({
    ProposalStatus.AUTHORIZED, ProposalStatus.REJECTED, ProposalStatus.DEPLOYED,
})

# The complete transition relation. emergency_override adds
# non-terminal -> Authorized edges, which are exactly the ones below
# plus Proposed -> Authorized.
ALLOWED_TRANSITIONS = frozenset({
    (ProposalStatus.PROPOSED, ProposalStatus.UNDER_REVIEW),
    (ProposalStatus.PROPOSED, ProposalStatus.AUTHORIZED),
    (ProposalStatus.UNDER_REVIEW, ProposalStatus.AUTHORIZED),
    (ProposalStatus.UNDER_REVIEW, ProposalStatus.REJECTED),
    (ProposalStatus.UNDER_REVIEW, ProposalStatus.CONFLICT),
    (ProposalStatus.CONFLICT, ProposalStatus.AUTHORIZED),
    (ProposalStatus.CONFLICT, ProposalStatus.REJECTED),
    (ProposalStatus.CONFLICT, ProposalStatus.CONFLICT),
    (ProposalStatus.AUTHORIZED, ProposalStatus.DEPLOYED),
})


def payload_digest(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


@dataclass(frozen=True)
class ConfigProposal:
    proposal_id: str
    target_kind: str  # "device" | "group"
    target: str
    payload: bytes
    proposer: str
    note: str = ""
    created_at: int = 0

    @property
    def digest(self) -> bytes:
        return payload_digest(self.payload)


@dataclass
class WorkflowState:
    proposal_id: str
    status: ProposalStatus = ProposalStatus.PROPOSED
    round: int = 0
    step_index: int = 0  # meaningful only while status == Conflict
    active_reviewers: set[str] = dc_field(default_factory=set)
    excluded_devices: set[str] = dc_field(default_factory=set)
    override_flag: bool = False

    def snapshot(self) -> "WorkflowState":
        return WorkflowState(
            proposal_id=self.proposal_id,
            status=self.status,
            round=self.round,
            step_index=self.step_index,
            active_reviewers=set(self.active_reviewers),
            excluded_devices=set(self.excluded_devices),
            override_flag=self.override_flag,
        )


class RoundOutcome(str, Enum):
    OPEN = "Open"
    CONSENSUS = "Consensus"
    STILL_CONFLICTING = "StillConflicting"
    BELOW_REVIEWER_FLOOR = "BelowReviewerFloor"
    ABANDONED = "Abandoned"  # round cut short by an emergency override


@dataclass
class DecisionRecord:
    round: int
    reviewer: str
    verdict: Verdict
    commit_message: str
    channel: str  # "primary" | "second"
    signature: bytes
    order: int  # monotonic apply index; later order supersedes
    voided: bool = False


@dataclass
class RoundRecord:
    round: int
    step_kind: str
    step_index: int
    timeout_ms: int
    opened_at: int
    deadline: int
    add_count: int = 0
    outcome: RoundOutcome = RoundOutcome.OPEN
    verdict: Verdict | None = None


@dataclass
class ChallengeRecord:
    challenge_id: str
    proposal_id: str
    round: int
    reviewer: str
    questioned_round: int
    questioned_verdict: Verdict
    nonce: bytes
    answer: str | None = None  # "confirm" | "deny" | "timeout"


@dataclass
class CommitmentRecord:
    reviewer: str
    verdict: Verdict
    token: bytes | None
    order: int


@dataclass
class ProposalRecord:
    proposal: ConfigProposal
    state: WorkflowState
    decisions: list[DecisionRecord] = dc_field(default_factory=list)
    rounds: dict[int, RoundRecord] = dc_field(default_factory=dict)
    exclusion_order: dict[str, int] = dc_field(default_factory=dict)
    acked_by: set[str] = dc_field(default_factory=set)

    @property
    def open_round(self) -> RoundRecord | None:
        current = self.rounds.get(self.state.round)
        if current is not None and current.outcome == RoundOutcome.OPEN:
            return current
        return None


class StateStore:
    """Materialized view over the event log; apply() is the only mutator."""

    def __init__(self):
        self.registry = Registry()
        self.proposals: dict[str, ProposalRecord] = {}
        self.chat: dict[tuple[str, int], list[tuple[str, str]]] = {}
        self.commitments: dict[tuple[str, int], dict[str, CommitmentRecord]] = {}
        self.challenges: dict[str, ChallengeRecord] = {}
        self.meeting_tokens: dict[tuple[str, int], bytes] = {}
        self.open_by_target: dict[tuple[str, str], str] = {}
        self._order = 0

    def record(self, proposal_id: str) -> ProposalRecord:
        try:
            return self.proposals[proposal_id]
        except KeyError:
            raise UnknownProposal(f"no proposal {proposal_id!r}") from None

    def state(self, proposal_id: str) -> WorkflowState:
        return self.record(proposal_id).state

    # -- reducer ---------------------------------------------------------------

    def apply(self, event: Event) -> None:
        self._order += 1
        handler = getattr(self, "_on_" + event.kind.name.lower(), None)
        if handler is None:
            raise SchemaViolation(f"no reducer for event kind {event.kind}")
        handler(event)

    def _on_actor_registered(self, event: Event) -> None:
        body = event.body
        keys = KeyRecord(
            actor_id=body["actor_id"],
            primary_pubkey=body["primary_pubkey"],
            second_channel_pubkey=body["second_channel_pubkey"],
        )
        self.registry.add(Actor(body["actor_id"], Role(body["role"]), keys))

    def _on_proposed(self, event: Event) -> None:
        body = event.body
        proposal = ConfigProposal(
            proposal_id=body["proposal_id"],
            target_kind=body["target_kind"],
            target=body["target"],
            payload=body["payload"],
            proposer=body["proposer"],
            note=body["note"],
            created_at=body["created_at"],
        )
        record = ProposalRecord(
            proposal=proposal,
            state=WorkflowState(proposal_id=proposal.proposal_id),
        )
        self.proposals[proposal.proposal_id] = record
        self.open_by_target[(proposal.target_kind, proposal.target)] = proposal.proposal_id

    def _on_reviewer_added(self, event: Event) -> None:
        self.record(event.proposal_id).state.active_reviewers.add(event.body["reviewer"])

    def _on_status_changed(self, event: Event) -> None:
        record = self.record(event.proposal_id)
        record.state.status = ProposalStatus(event.body["new_status"])
        if record.state.status in TERMINAL_STATUSES:
            key = (record.proposal.target_kind, record.proposal.target)
            if self.open_by_target.get(key) == record.proposal.proposal_id:
                del self.open_by_target[key]

    def _on_review_committed(self, event: Event) -> None:
        body = event.body
        self.record(event.proposal_id).decisions.append(DecisionRecord(
            round=body["round"],
            reviewer=body["reviewer"],
            verdict=Verdict(body["verdict"]),
            commit_message=body["commit_message"],
            channel=body["channel"],
            signature=body["signature"],
            order=self._order,
        ))

    def _on_round_opened(self, event: Event) -> None:
        body = event.body
        record = self.record(event.proposal_id)
        record.state.round = body["round"]
        record.state.step_index = body["step_index"]
        record.rounds[body["round"]] = RoundRecord(
            round=body["round"],
            step_kind=body["step_kind"],
            step_index=body["step_index"],
            timeout_ms=body["timeout_ms"],
            opened_at=body["opened_at"],
            deadline=body["deadline"],
            add_count=body["add_count"],
        )

    def _on_round_closed(self, event: Event) -> None:
        body = event.body
        round_record = self.record(event.proposal_id).rounds[body["round"]]
        round_record.outcome = RoundOutcome(body["outcome"])
        round_record.verdict = Verdict(body["verdict"]) if body["verdict"] else None

    def _on_confirmation_requested(self, event: Event) -> None:
        pass  # audit-only: carried for reviewers, no state to fold

    def _on_challenge_issued(self, event: Event) -> None:
        body = event.body
        self.challenges[body["challenge_id"]] = ChallengeRecord(
            challenge_id=body["challenge_id"],
            proposal_id=event.proposal_id,
            round=body["round"],
            reviewer=body["reviewer"],
            questioned_round=body["questioned_round"],
            questioned_verdict=Verdict(body["questioned_verdict"]),
            nonce=body["nonce"],
        )

    def _on_challenge_answered(self, event: Event) -> None:
        body = event.body
        challenge = self.challenges[body["challenge_id"]]
        challenge.answer = body["answer"]
        if body["answer"] in ("deny", "timeout"):
            record = self.record(event.proposal_id)
            for decision in reversed(record.decisions):
                if (decision.reviewer == challenge.reviewer
                        and decision.round == challenge.questioned_round
                        and not decision.voided):
                    decision.voided = True
                    break

    def _on_reviewer_excluded(self, event: Event) -> None:
        record = self.record(event.proposal_id)
        record.state.excluded_devices.add(event.body["reviewer"])
        record.exclusion_order[event.body["reviewer"]] = self._order

    def _on_chat_message(self, event: Event) -> None:
        body = event.body
        key = (event.proposal_id, body["round"])
        self.chat.setdefault(key, []).append((body["author"], body["text"]))

    def _on_group_decision_committed(self, event: Event) -> None:
        body = event.body
        key = (event.proposal_id, body["round"])
        self.commitments.setdefault(key, {})[body["reviewer"]] = CommitmentRecord(
            reviewer=body["reviewer"],
            verdict=Verdict(body["verdict"]),
            token=body["attestation_token"],
            order=self._order,
        )

    def _on_meeting_attested(self, event: Event) -> None:
        body = event.body
        self.meeting_tokens[(event.proposal_id, body["round"])] = body["token"]

    def _on_pull_acknowledged(self, event: Event) -> None:
        self.record(event.proposal_id).acked_by.add(event.body["device"])

    def _on_emergency_override(self, event: Event) -> None:
        self.record(event.proposal_id).state.override_flag = True


# -- pure evaluation helpers ------------------------------------------------------

def effective_decision(record: ProposalRecord, reviewer: str) -> DecisionRecord | None:
    """The reviewer's latest non-voided decision, if any."""
    for decision in reversed(record.decisions):
        if decision.reviewer == reviewer and not decision.voided:
            return decision
    return None


def participating_reviewers(record: ProposalRecord) -> set[str]:
    """Active reviewers whose input may count.

    A reviewer whose device was excluded re-enters only by deciding over
    the second channel after the exclusion; primary-channel history from an
    excluded device never counts.
    """
    participants = set()
    for reviewer in record.state.active_reviewers:
        if reviewer not in record.state.excluded_devices:
            participants.add(reviewer)
            continue
        decision = effective_decision(record, reviewer)
        if (decision is not None and decision.channel == "second"
                and decision.order > record.exclusion_order.get(reviewer, 0)):
            participants.add(reviewer)
    return participants


def effective_verdicts(record: ProposalRecord) -> dict[str, Verdict | None]:
    """Current verdict per participating reviewer (None = not decided)."""
    verdicts: dict[str, Verdict | None] = {}
    for reviewer in participating_reviewers(record):
        decision = effective_decision(record, reviewer)
        if reviewer in record.state.excluded_devices and decision is not None \
                and decision.channel != "second":
            decision = None
        verdicts[reviewer] = decision.verdict if decision else None
    return verdicts


def unanimity_result(verdicts: dict[str, Verdict | None]) -> ProposalStatus:
    """All approve -> Authorized; all reject -> Rejected; anything else Conflict."""
    values = list(verdicts.values())
    if values and all(v == Verdict.APPROVE for v in values):
        return ProposalStatus.AUTHORIZED
    if values and all(v == Verdict.REJECT for v in values):
        return ProposalStatus.REJECTED
    return ProposalStatus.CONFLICT


def rebuild(events: list[Event]) -> StateStore:
    """Fold a committed event sequence into a fresh store (replay)."""
    store = StateStore()
    for event in events:
        store.apply(event)
    return store
