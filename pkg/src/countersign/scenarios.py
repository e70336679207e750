"""Deterministic end-to-end scenario runs with scripted reviewer behavior.

A scenario fixes a policy, a proposal with a ground-truth validity label,
and one behavior script per reviewer (initial verdict plus per-round
directives). Runs use a logical clock and seeded randomness, so two runs of
the same scenario produce identical ledgers byte for byte. The majority
baseline applies a plain vote over the initial verdicts for comparison.
"""

from __future__ import annotations

import json as _json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .clock import LogicalClock, SeededRandom
from .errors import RoundClosed, ScriptIncomplete, ValidationError
from .events import EventKind
from .identity import Channel, Keystore, Role
from .ledger import LedgerEntry
from .node import CmsNode
from .policy import PolicySet, StepKind, load_policies
from . import signing
from .workflow import (
    ConfigProposal,
    ProposalStatus,
    Verdict,
    effective_decision,
)


@dataclass(frozen=True)
class BehaviorScript:
    """Per-round directives for one reviewer.

    bb1/bb3: keep | flip | flip_if_mentions:<substring> | silent
    bb2: confirm | deny | silent
    commit (BB4/BB5): approve | reject | silent
    """

    initial: Verdict
    message: str = ""
    bb1: str = "keep"
    bb2: str = "confirm"
    bb3: str = "silent"
    commit: str = "silent"
    chat: tuple[str, ...] = ()
    delay_ms: int = 0


@dataclass(frozen=True)
class Scenario:
    name: str
    validity: str  # "Valid" | "Invalid" (ground truth, not visible to the CMS)
    proposer: str
    target_kind: str
    target: str
    payload: bytes
    note: str
    policies: PolicySet
    behaviors: dict[str, BehaviorScript]
    expected_final_status: str
    expected_majority_vote_status: str
    notes: str = ""


@dataclass
class ScenarioResult:
    final_status: ProposalStatus
    rounds_used: int
    excluded_devices: set[str]
    entries: list[LedgerEntry]
    export: bytes
    proposal_id: str
    node: CmsNode = field(repr=False, default=None)


@dataclass(frozen=True)
class ComparisonRow:
    scenario: str
    validity: str
    mediated_status: ProposalStatus
    majority_status: ProposalStatus
    mediated_correct: bool
    majority_correct: bool


class Participant:
    """One actor with a local keystore, driving a node in process."""

    def __init__(self, node: CmsNode, actor_id: str, keystore: Keystore):
        self.node = node
        self.actor_id = actor_id
        self.keystore = keystore

    @classmethod
    def create(cls, node: CmsNode, actor_id: str, role: Role,
               rng=None) -> "Participant":
        token = (rng or node.rng).token
        second = role == Role.REVIEWER
        keystore = Keystore(primary_seed=token(32),
                            second_seed=token(32) if second else None)
        participant = cls(node, actor_id, keystore)
        participant.register(role)
        return participant

    def register(self, role: Role) -> None:
        keys = self.keystore.key_record(self.actor_id)
        message = signing.registration_message(
            self.actor_id, role.value, keys.primary_pubkey, keys.second_channel_pubkey)
        self.node.register_actor(
            self.actor_id, role, keys.primary_pubkey, keys.second_channel_pubkey,
            self.keystore.sign(Channel.PRIMARY, message))

    def propose(self, proposal: ConfigProposal):
        message = signing.proposal_message(
            proposal.proposal_id, proposal.target_kind, proposal.target,
            proposal.digest, proposal.proposer, proposal.note, proposal.created_at)
        return self.node.propose(proposal, self.keystore.sign(Channel.PRIMARY, message))

    def review(self, proposal_id: str, round_no: int, verdict: Verdict,
               message: str = "", channel: Channel = Channel.PRIMARY):
        payload = signing.review_message(
            proposal_id, round_no, self.actor_id, verdict.value, message, channel.value)
        return self.node.submit_review(
            proposal_id, round_no, self.actor_id, verdict, message, channel,
            self.keystore.sign(channel, payload))

    def respond_challenge(self, challenge_id: str, answer: str):
        challenge = self.node.store.challenges[challenge_id]
        payload = signing.challenge_response_message(challenge_id, challenge.nonce, answer)
        return self.node.respond_challenge(
            challenge_id, answer, self.keystore.sign(Channel.SECOND, payload))

    def chat(self, proposal_id: str, round_no: int, text: str):
        payload = signing.chat_message(proposal_id, round_no, self.actor_id, text)
        return self.node.post_chat(
            proposal_id, round_no, self.actor_id, text,
            self.keystore.sign(Channel.PRIMARY, payload))

    def commit_group_decision(self, proposal_id: str, round_no: int, verdict: Verdict,
                              token: bytes | None = None):
        payload = signing.group_decision_message(
            proposal_id, round_no, self.actor_id, verdict.value, token)
        return self.node.commit_group_decision(
            proposal_id, round_no, self.actor_id, verdict, token,
            self.keystore.sign(Channel.PRIMARY, payload))

    def acknowledge(self, proposal_id: str):
        payload = signing.ack_message(proposal_id, self.actor_id)
        return self.node.acknowledge_pull(
            proposal_id, self.actor_id, self.keystore.sign(Channel.PRIMARY, payload))

    def override(self, proposal_id: str, justification: str):
        payload = signing.override_message(proposal_id, self.actor_id, justification)
        return self.node.emergency_override(
            proposal_id, self.actor_id, justification,
            self.keystore.sign(Channel.PRIMARY, payload))


# -- scenario execution ---------------------------------------------------------

MAX_ITERATIONS = 100


def run_scenario(scenario: Scenario, seed: int = 0) -> ScenarioResult:
    clock = LogicalClock()
    rng = SeededRandom(seed)
    node = CmsNode.dev(scenario.policies, clock=clock, rng=rng)
    policy = scenario.policies.resolve(scenario.target)

    missing = [r for r in (*policy.reviewers, *policy.reviewer_pool)
               if r not in scenario.behaviors]
    if missing:
        raise ScriptIncomplete(f"no behavior for reviewers: {missing}")

    proposer = Participant.create(node, scenario.proposer, Role.PROPOSER, rng)
    cast: dict[str, Participant] = {}
    for reviewer in (*policy.reviewers, *policy.reviewer_pool):
        cast[reviewer] = Participant.create(node, reviewer, Role.REVIEWER, rng)

    proposal_id = f"{scenario.name}-prop"
    proposal = ConfigProposal(
        proposal_id=proposal_id,
        target_kind=scenario.target_kind,
        target=scenario.target,
        payload=scenario.payload,
        proposer=scenario.proposer,
        note=scenario.note,
        created_at=clock.now_ms(),
    )
    proposer.propose(proposal)

    for reviewer in policy.reviewers:
        script = scenario.behaviors[reviewer]
        if script.delay_ms:
            clock.advance(script.delay_ms)
        cast[reviewer].review(proposal_id, 0, script.initial, script.message)

    for _ in range(MAX_ITERATIONS):
        state = node.state(proposal_id)
        if state.status in (ProposalStatus.AUTHORIZED, ProposalStatus.REJECTED,
                            ProposalStatus.DEPLOYED):
            break
        record = node.store.record(proposal_id)
        open_round = record.open_round
        if open_round is None:
            raise ScriptIncomplete(f"{scenario.name}: conflict without an open round")
        _play_round(scenario, node, cast, proposal_id, open_round.round,
                    StepKind(open_round.step_kind), clock)
    else:
        raise ScriptIncomplete(f"{scenario.name}: did not terminate")

    record = node.store.record(proposal_id)
    rounds_used = 1 + sum(
        1 for e in node.ledger.entries() if e.event.kind == EventKind.ROUND_OPENED)
    return ScenarioResult(
        final_status=record.state.status,
        rounds_used=rounds_used,
        excluded_devices=set(record.state.excluded_devices),
        entries=node.ledger.entries(),
        export=node.ledger.export(),
        proposal_id=proposal_id,
        node=node,
    )


def _play_round(scenario, node, cast, proposal_id, round_no, kind, clock):
    record = node.store.record(proposal_id)

    def still_open() -> bool:
        current = record.open_round
        return current is not None and current.round == round_no

    roster = _round_roster(node, proposal_id, cast)
    if kind in (StepKind.BB1, StepKind.BB3):
        directive_name = "bb1" if kind == StepKind.BB1 else "bb3"
        for reviewer in roster:
            if not still_open():
                return
            script = scenario.behaviors[reviewer]
            has_decision = effective_decision(record, reviewer) is not None
            directive = getattr(script, directive_name) if has_decision else "fresh"
            _play_decision(node, cast[reviewer], script, proposal_id, round_no,
                           directive, clock)
    elif kind == StepKind.BB2:
        for challenge in node.open_challenges():
            if not still_open():
                return
            if challenge.proposal_id != proposal_id:
                continue
            script = scenario.behaviors[challenge.reviewer]
            if script.delay_ms:
                clock.advance(script.delay_ms)
            if script.bb2 in ("confirm", "deny"):
                cast[challenge.reviewer].respond_challenge(
                    challenge.challenge_id, script.bb2)
    else:  # BB4 / BB5
        token = node.meeting_token(proposal_id) if kind == StepKind.BB5 else None
        if kind == StepKind.BB4:
            for reviewer in roster:
                if not still_open():
                    return
                for line in scenario.behaviors[reviewer].chat:
                    cast[reviewer].chat(proposal_id, round_no, line)
        for reviewer in roster:
            if not still_open():
                return
            script = scenario.behaviors[reviewer]
            if script.commit == "silent":
                continue
            if script.delay_ms:
                clock.advance(script.delay_ms)
            verdict = Verdict.APPROVE if script.commit == "approve" else Verdict.REJECT
            cast[reviewer].commit_group_decision(proposal_id, round_no, verdict, token)

    if still_open():
        # Whoever stayed silent forfeits: jump past the recorded deadline.
        clock.set(record.open_round.deadline + 1)
        node.tick()


def _round_roster(node, proposal_id, cast) -> list[str]:
    # Excluded devices cannot submit over their primary channel; scripts
    # do not model second-channel re-decisions, so they sit rounds out.
    record = node.store.record(proposal_id)
    ordered = []
    for entry in node.ledger.get_entries(proposal_id=proposal_id,
                                         kind=EventKind.REVIEWER_ADDED):
        reviewer = entry.event.body["reviewer"]
        if reviewer in record.state.active_reviewers and reviewer in cast \
                and reviewer not in record.state.excluded_devices \
                and reviewer not in ordered:
            ordered.append(reviewer)
    return ordered


def _play_decision(node, participant, script, proposal_id, round_no, directive, clock):
    record = node.store.record(proposal_id)
    if directive == "silent":
        return
    if script.delay_ms:
        clock.advance(script.delay_ms)
    if directive == "fresh":
        participant.review(proposal_id, round_no, script.initial, script.message)
        return
    current = effective_decision(record, participant.actor_id)
    verdict = current.verdict if current else script.initial
    message = script.message
    if directive == "flip":
        verdict = _flipped(verdict)
    elif directive.startswith("flip_if_mentions:"):
        needle = directive.split(":", 1)[1]
        if needle and needle in _shown_messages(node, proposal_id, round_no,
                                                participant.actor_id):
            verdict = _flipped(verdict)
    elif directive != "keep":
        raise ScriptIncomplete(f"unknown directive {directive!r}")
    try:
        participant.review(proposal_id, round_no, verdict, message)
    except RoundClosed:
        pass  # an earlier submission already closed the round


def _flipped(verdict: Verdict) -> Verdict:
    return Verdict.REJECT if verdict == Verdict.APPROVE else Verdict.APPROVE


def _shown_messages(node, proposal_id, round_no, reviewer) -> str:
    for entry in node.ledger.get_entries(proposal_id=proposal_id,
                                         kind=EventKind.CONFIRMATION_REQUESTED):
        body = entry.event.body
        if body["round"] == round_no and body["reviewer"] == reviewer:
            return body["peer_messages"]
    return ""


# -- baseline and comparison ---------------------------------------------------

def majority_vote_baseline(scenario: Scenario) -> ProposalStatus:
    """Simple majority over the initial verdicts; ties reject, no mediation."""
    policy = scenario.policies.resolve(scenario.target)
    approvals = rejections = 0
    for reviewer in policy.reviewers:
        script = scenario.behaviors.get(reviewer)
        if script is None:
            raise ScriptIncomplete(f"no behavior for reviewer {reviewer}")
        if script.initial == Verdict.APPROVE:
            approvals += 1
        else:
            rejections += 1
    if approvals > rejections:
        return ProposalStatus.AUTHORIZED
    return ProposalStatus.REJECTED


def compare(scenario: Scenario, seed: int = 0) -> ComparisonRow:
    mediated = run_scenario(scenario, seed=seed).final_status
    majority = majority_vote_baseline(scenario)

    def correct(status: ProposalStatus) -> bool:
        should_reject = scenario.validity == "Invalid"
        return (status == ProposalStatus.REJECTED) == should_reject

    return ComparisonRow(
        scenario=scenario.name,
        validity=scenario.validity,
        mediated_status=mediated,
        majority_status=majority,
        mediated_correct=correct(mediated),
        majority_correct=correct(majority),
    )


# -- scenario files ---------------------------------------------------------------

def load_scenario(document: bytes | str | dict) -> Scenario:
    if isinstance(document, (bytes, str)):
        doc = _json.loads(document)
    else:
        doc = document
    try:
        target_kind, target = next(iter(doc["target"].items()))
        behaviors = {
            actor: BehaviorScript(
                initial=Verdict(raw["initial"]),
                message=raw.get("message", ""),
                bb1=raw.get("bb1", "keep"),
                bb2=raw.get("bb2", "confirm"),
                bb3=raw.get("bb3", "silent"),
                commit=raw.get("commit", "silent"),
                chat=tuple(raw.get("chat", ())),
                delay_ms=int(raw.get("delay_ms", 0)),
            )
            for actor, raw in doc["behaviors"].items()
        }
        scenario = Scenario(
            name=doc["name"],
            validity=doc["validity"],
            proposer=doc["proposer"],
            target_kind=target_kind,
            target=target,
            payload=doc["payload_text"].encode("utf-8"),
            note=doc.get("note", ""),
            policies=load_policies(_json.dumps(doc["policy"])),
            behaviors=behaviors,
            expected_final_status=doc["expected_final_status"],
            expected_majority_vote_status=doc["expected_majority_vote_status"],
            notes=doc.get("notes", ""),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ValidationError(f"bad scenario document: {exc}") from exc
    if scenario.validity not in ("Valid", "Invalid"):
        raise ValidationError("validity must be 'Valid' or 'Invalid'")
    for status in (scenario.expected_final_status,
                   scenario.expected_majority_vote_status):
        if status not in ("Authorized", "Rejected"):
            raise ValidationError("expected statuses must be Authorized or Rejected")
    return scenario


def load_scenario_file(path: str | Path) -> Scenario:
    return load_scenario(Path(path).read_bytes())


def builtin_scenarios() -> list[Scenario]:
    """The shipped corpus, in name order."""
    package = resources.files(__package__) / "scenarios_data"
    scenarios = []
    for resource in sorted(package.iterdir(), key=lambda r: r.name):
        if resource.name.endswith(".json"):
            scenarios.append(load_scenario(resource.read_bytes()))
    return scenarios
