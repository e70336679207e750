"""The CMS engine: command validation, event emission, round orchestration.

Commands validate against the event-sourced store, append events to the
peer-endorsed ledger, then fold them back through the reducer; nothing
mutates state any other way. Engine-originated events (status changes,
round bookkeeping) are authored by a dedicated system actor whose key also
author-signs every appended entry; principal-level signatures travel inside
event bodies and are verified before anything is appended.

Deadlines are enforced lazily: every command first settles any expired
round of the proposal it touches, based on the deadline recorded in the
round's opening event, so outcomes do not depend on when the process
happened to look at the clock.
"""

from __future__ import annotations

import threading

from . import mediation, signing
from .clock import OsRandom, WallClock
from .errors import (
    AlreadyAnswered,
    ConcurrentProposal,
    DuplicateDecision,
    DuplicateId,
    DuplicateProposalId,
    EmptyJustification,
    ExcludedDevice,
    IncompleteRound,
    InvalidSignature,
    MissingAttestation,
    NoOpenRound,
    NotActiveReviewer,
    NotAdmin,
    NotAuthorized,
    NotBB2Round,
    NotBB5Round,
    NotInConflict,
    PoolExhausted,
    RoundAlreadyOpen,
    RoundClosed,
    SchemaViolation,
    TerminalState,
    UnknownChallenge,
    ValidationError,
    WrongDevice,
)
from .events import Event, EventKind
from .identity import Channel, Keystore, Role, validate_registration
from .ledger import Ledger, LedgerEntry, LocalPeer, read_export, verify_chain
from .policy import MediationStep, Policy, PolicySet, StepKind
from .workflow import (
    ALLOWED_TRANSITIONS,
    ConfigProposal,
    ProposalRecord,
    ProposalStatus,
    RoundOutcome,
    RoundRecord,
    StateStore,
    TERMINAL_STATUSES,
    Verdict,
    WorkflowState,
    effective_decision,
    effective_verdicts,
    participating_reviewers,
    payload_digest,
    rebuild,
    unanimity_result,
)

SYSTEM_ACTOR = "cms"
DEFAULT_PEER_COUNT = 4


def make_dev_peers(rng=None, count: int = DEFAULT_PEER_COUNT,
                   appender_pubkey: bytes | None = None,
                   seeds: dict[str, bytes] | None = None):
    """In-process peer set; keys are deterministic when rng is seeded or
    when explicit seeds are supplied (restart replay)."""
    from .identity import public_key
    if seeds is None:
        seeds = {f"peer{i + 1}": rng.token(32) for i in range(count)}
    peer_keys = {pid: public_key(seed) for pid, seed in seeds.items()}
    appender = {SYSTEM_ACTOR: appender_pubkey} if appender_pubkey else {}
    peers = [LocalPeer(pid, seed, peer_keys, appender) for pid, seed in seeds.items()]
    return peers, peer_keys


class CmsNode:
    """One logical CMS instance over a peer set."""

    def __init__(
        self,
        policies: PolicySet,
        peers,
        peer_keys: dict[str, bytes],
        system_keystore: Keystore,
        clock=None,
        rng=None,
        persist_path=None,
        auto_advance: bool = True,
        register_system: bool = True,
    ):
        self.policies = policies
        self.peer_keys = dict(peer_keys)
        self.clock = clock or WallClock()
        self.rng = rng or OsRandom()
        self.auto_advance = auto_advance
        self.store = StateStore()
        self._system = system_keystore
        self.ledger = Ledger(
            peers,
            SYSTEM_ACTOR,
            lambda message: system_keystore.sign(Channel.PRIMARY, message),
            persist_path,
            author_pubkey=system_keystore.key_record(SYSTEM_ACTOR).primary_pubkey,
        )
        self._policy_for: dict[str, Policy] = {}
        self._lock = threading.RLock()
        if register_system:
            self._register_system()

    @classmethod
    def dev(cls, policies: PolicySet, peer_count: int = DEFAULT_PEER_COUNT,
            clock=None, rng=None, persist_path=None, auto_advance: bool = True):
        """Self-contained node with in-process peers (tests, scenarios)."""
        from .identity import public_key
        rng = rng or OsRandom()
        system = Keystore(primary_seed=rng.token(32))
        peers, peer_keys = make_dev_peers(
            rng, peer_count, appender_pubkey=public_key(system.primary_seed))
        return cls(policies, peers, peer_keys, system,
                   clock=clock, rng=rng, persist_path=persist_path,
                   auto_advance=auto_advance)

    @property
    def system_pubkey(self) -> bytes:
        return self._system.key_record(SYSTEM_ACTOR).primary_pubkey

    # -- bootstrap / identity ---------------------------------------------------

    def _register_system(self) -> None:
        keys = self._system.key_record(SYSTEM_ACTOR)
        message = signing.registration_message(
            SYSTEM_ACTOR, Role.PEER.value, keys.primary_pubkey, keys.second_channel_pubkey)
        self.register_actor(
            SYSTEM_ACTOR, Role.PEER, keys.primary_pubkey, keys.second_channel_pubkey,
            self._system.sign(Channel.PRIMARY, message))

    def register_actor(self, actor_id: str, role: Role, primary_pubkey: bytes,
                       second_pubkey: bytes | None, signature: bytes):
        from .identity import KeyRecord, verify_with_key
        with self._lock:
            keys = KeyRecord(actor_id, primary_pubkey, second_pubkey)
            validate_registration(actor_id, role, keys)
            if actor_id in self.store.registry:
                raise DuplicateId(f"actor {actor_id} already registered")
            message = signing.registration_message(
                actor_id, role.value, primary_pubkey, second_pubkey)
            if not verify_with_key(primary_pubkey, message, signature):
                raise InvalidSignature("registration signature does not verify")
            self._emit(EventKind.ACTOR_REGISTERED, actor_id, None, {
                "actor_id": actor_id,
                "role": role.value,
                "primary_pubkey": primary_pubkey,
                "second_channel_pubkey": second_pubkey,
                "signature": signature,
            })
            return self.store.registry.get(actor_id)

    # -- event plumbing -----------------------------------------------------------

    def _emit(self, kind: EventKind, actor: str, proposal_id: str | None,
              body: dict) -> LedgerEntry:
        event = Event(kind=kind, actor=actor, body=body,
                      timestamp_ms=self.clock.now_ms(), proposal_id=proposal_id)
        entry = self.ledger.append(event)
        self.store.apply(event)
        return entry

    def _policy(self, proposal_id: str) -> Policy:
        policy = self._policy_for.get(proposal_id)
        if policy is None:
            record = self.store.record(proposal_id)
            policy = self.policies.resolve(record.proposal.target)
            self._policy_for[proposal_id] = policy
        return policy

    def _status_change(self, proposal_id: str, new_status: ProposalStatus) -> None:
        state = self.store.state(proposal_id)
        edge = (state.status, new_status)
        if edge not in ALLOWED_TRANSITIONS:
            raise TerminalState(f"illegal transition {edge[0].value} -> {edge[1].value}")
        self._emit(EventKind.STATUS_CHANGED, SYSTEM_ACTOR, proposal_id, {
            "proposal_id": proposal_id,
            "old_status": state.status.value,
            "new_status": new_status.value,
            "round": state.round,
        })

    # -- proposal phase -------------------------------------------------------------

    def propose(self, proposal: ConfigProposal, signature: bytes) -> WorkflowState:
        with self._lock:
            actor = self.store.registry.get(proposal.proposer)
            if actor.role not in (Role.PROPOSER, Role.ADMIN):
                raise ValidationError(f"role {actor.role.value} cannot propose")
            if not proposal.proposal_id:
                raise SchemaViolation("proposal_id must be non-empty")
            if proposal.proposal_id in self.store.proposals:
                raise DuplicateProposalId(f"proposal {proposal.proposal_id} exists")
            if not proposal.payload:
                raise SchemaViolation("payload must be non-empty")
            if proposal.target_kind not in ("device", "group"):
                raise SchemaViolation("target_kind must be 'device' or 'group'")
            policy = self.policies.resolve(proposal.target)
            missing = [
                r for r in policy.reviewers
                if r not in self.store.registry
                or self.store.registry.get(r).role != Role.REVIEWER
            ]
            if missing:
                raise ValidationError(
                    [f"policy reviewer {r} is not a registered reviewer" for r in missing])
            open_pid = self.store.open_by_target.get((proposal.target_kind, proposal.target))
            if open_pid is not None:
                raise ConcurrentProposal(
                    f"proposal {open_pid} for this target is still in flight")
            message = signing.proposal_message(
                proposal.proposal_id, proposal.target_kind, proposal.target,
                proposal.digest, proposal.proposer, proposal.note, proposal.created_at)
            if not self.store.registry.verify(
                    proposal.proposer, Channel.PRIMARY, message, signature):
                raise InvalidSignature("proposal signature does not verify")

            self._emit(EventKind.PROPOSED, proposal.proposer, proposal.proposal_id, {
                "proposal_id": proposal.proposal_id,
                "target_kind": proposal.target_kind,
                "target": proposal.target,
                "payload": proposal.payload,
                "payload_digest": proposal.digest,
                "proposer": proposal.proposer,
                "note": proposal.note,
                "created_at": proposal.created_at,
                "signature": signature,
            })
            self._policy_for[proposal.proposal_id] = policy
            for reviewer in policy.reviewers:
                self._emit(EventKind.REVIEWER_ADDED, SYSTEM_ACTOR, proposal.proposal_id, {
                    "proposal_id": proposal.proposal_id, "round": 0, "reviewer": reviewer,
                })
            self._status_change(proposal.proposal_id, ProposalStatus.UNDER_REVIEW)
            return self.state(proposal.proposal_id)

    # -- review phase ---------------------------------------------------------------

    def submit_review(self, proposal_id: str, round_no: int, reviewer: str,
                      verdict: Verdict, commit_message: str, channel: Channel,
                      signature: bytes) -> WorkflowState:
        with self._lock:
            record = self.store.record(proposal_id)
            self._expire(proposal_id)
            state = record.state
            open_round = record.open_round
            accepts = (
                state.status == ProposalStatus.UNDER_REVIEW
                or (state.status == ProposalStatus.CONFLICT and open_round is not None
                    and StepKind(open_round.step_kind) in mediation.DECISION_STEPS)
            )
            if not accepts:
                raise RoundClosed("no round currently accepts review decisions")
            if round_no != state.round:
                raise RoundClosed(f"round {round_no} is not the current round {state.round}")
            if reviewer not in state.active_reviewers:
                raise NotActiveReviewer(f"{reviewer} is not an active reviewer")
            if reviewer in state.excluded_devices and channel == Channel.PRIMARY:
                raise ExcludedDevice(f"{reviewer}'s primary device is excluded")
            if state.round == 0:
                already = any(
                    d.reviewer == reviewer and d.round == 0 for d in record.decisions)
                if already:
                    raise DuplicateDecision("initial reviews cannot be re-submitted")
            message = signing.review_message(
                proposal_id, round_no, reviewer, verdict.value, commit_message,
                channel.value)
            if not self.store.registry.verify(reviewer, channel, message, signature):
                raise InvalidSignature("review signature does not verify")

            self._emit(EventKind.REVIEW_COMMITTED, reviewer, proposal_id, {
                "proposal_id": proposal_id,
                "round": round_no,
                "reviewer": reviewer,
                "verdict": verdict.value,
                "commit_message": commit_message,
                "channel": channel.value,
                "signature": signature,
            })
            if state.status == ProposalStatus.UNDER_REVIEW:
                verdicts = effective_verdicts(record)
                if verdicts and all(v is not None for v in verdicts.values()):
                    self._finish_round0(proposal_id)
            else:
                progress = mediation.decision_round_progress(record, state.round)
                if progress is not None:
                    self._close_round(proposal_id, *progress)
            return self.state(proposal_id)

    def evaluate_authorization(self, proposal_id: str) -> ProposalStatus:
        with self._lock:
            record = self.store.record(proposal_id)
            self._expire(proposal_id)
            if record.state.status in TERMINAL_STATUSES:
                return record.state.status
            if record.state.status != ProposalStatus.UNDER_REVIEW:
                raise IncompleteRound("a mediation round is in progress")
            verdicts = effective_verdicts(record)
            if not verdicts or any(v is None for v in verdicts.values()):
                raise IncompleteRound("not every active reviewer has decided")
            self._finish_round0(proposal_id)
            return self.store.state(proposal_id).status

    def _finish_round0(self, proposal_id: str) -> None:
        record = self.store.record(proposal_id)
        result = unanimity_result(effective_verdicts(record))
        self._status_change(proposal_id, result)
        if result == ProposalStatus.CONFLICT and self.auto_advance:
            self._advance(proposal_id, 0)

    # -- mediation rounds -------------------------------------------------------------

    def _advance(self, proposal_id: str, from_index: int) -> None:
        record = self.store.record(proposal_id)
        nxt = mediation.next_runnable_step(self._policy(proposal_id), from_index, record)
        if nxt is None:
            self._status_change(proposal_id, ProposalStatus.REJECTED)
            return
        index, step = nxt
        self._open(proposal_id, index, step)

    def open_round(self, proposal_id: str, step: MediationStep) -> RoundRecord:
        """Manual round opening; the engine normally advances on its own."""
        with self._lock:
            record = self.store.record(proposal_id)
            self._expire(proposal_id)
            if record.state.status != ProposalStatus.CONFLICT:
                raise NotInConflict(f"proposal is {record.state.status.value}")
            if record.open_round is not None:
                raise RoundAlreadyOpen(f"round {record.state.round} is open")
            self._open(proposal_id, record.state.step_index, step)
            return record.rounds[record.state.round]

    def _open(self, proposal_id: str, step_index: int, step: MediationStep) -> None:
        record = self.store.record(proposal_id)
        round_no = record.state.round + 1
        opened_at = self.clock.now_ms()
        self._emit(EventKind.ROUND_OPENED, SYSTEM_ACTOR, proposal_id, {
            "proposal_id": proposal_id,
            "round": round_no,
            "step_kind": step.kind.value,
            "step_index": step_index,
            "timeout_ms": step.timeout_ms,
            "opened_at": opened_at,
            "deadline": opened_at + step.timeout_ms,
            "add_count": step.add_count,
        })
        if step.kind == StepKind.BB1:
            for reviewer in sorted(participating_reviewers(record)):
                self._emit(EventKind.CONFIRMATION_REQUESTED, SYSTEM_ACTOR, proposal_id, {
                    "proposal_id": proposal_id,
                    "round": round_no,
                    "reviewer": reviewer,
                    "peer_messages": mediation.peer_commit_messages(record, reviewer),
                })
        elif step.kind == StepKind.BB2:
            self._issue_challenges(proposal_id, round_no)
            self._maybe_close_challenge_round(proposal_id)
        elif step.kind == StepKind.BB3:
            self._add_pool_reviewers(proposal_id, round_no, step.add_count)
        elif step.kind == StepKind.BB5:
            self._attest_meeting(proposal_id, round_no)

    def bb2_issue_challenges(self, proposal_id: str) -> list[str]:
        """Challenge ids for the open BB2 round (idempotent)."""
        with self._lock:
            record = self.store.record(proposal_id)
            open_round = record.open_round
            if open_round is None or StepKind(open_round.step_kind) != StepKind.BB2:
                raise NotBB2Round("no BB2 round is open")
            return self._issue_challenges(proposal_id, open_round.round)

    def _issue_challenges(self, proposal_id: str, round_no: int) -> list[str]:
        record = self.store.record(proposal_id)
        issued = []
        for reviewer in sorted(participating_reviewers(record)):
            challenge_id = f"{proposal_id}:{round_no}:{reviewer}"
            if challenge_id in self.store.challenges:
                issued.append(challenge_id)
                continue
            decision = effective_decision(record, reviewer)
            if decision is None:
                continue  # never decided; nothing to confirm
            self._emit(EventKind.CHALLENGE_ISSUED, SYSTEM_ACTOR, proposal_id, {
                "proposal_id": proposal_id,
                "round": round_no,
                "challenge_id": challenge_id,
                "reviewer": reviewer,
                "questioned_round": decision.round,
                "questioned_verdict": decision.verdict.value,
                "nonce": self.rng.token(16),
            })
            issued.append(challenge_id)
        return issued

    def respond_challenge(self, challenge_id: str, answer: str,
                          signature: bytes) -> WorkflowState:
        with self._lock:
            challenge = self.store.challenges.get(challenge_id)
            if challenge is None:
                raise UnknownChallenge(f"no challenge {challenge_id!r}")
            proposal_id = challenge.proposal_id
            record = self.store.record(proposal_id)
            self._expire(proposal_id)
            open_round = record.open_round
            if open_round is None or open_round.round != challenge.round:
                raise RoundClosed("the challenge's round is no longer open")
            if challenge.answer is not None:
                raise AlreadyAnswered(f"challenge {challenge_id} already resolved")
            if answer not in ("confirm", "deny"):
                raise SchemaViolation("answer must be 'confirm' or 'deny'")
            message = signing.challenge_response_message(
                challenge_id, challenge.nonce, answer)
            if not self.store.registry.verify(
                    challenge.reviewer, Channel.SECOND, message, signature):
                raise InvalidSignature("second-channel signature does not verify")

            self._emit(EventKind.CHALLENGE_ANSWERED, challenge.reviewer, proposal_id, {
                "proposal_id": proposal_id,
                "round": challenge.round,
                "challenge_id": challenge_id,
                "reviewer": challenge.reviewer,
                "answer": answer,
                "signature": signature,
            })
            if answer == "deny":
                self._exclude(proposal_id, challenge.round, challenge.reviewer,
                              "decision denied over second channel")
            self._maybe_close_challenge_round(proposal_id)
            return self.state(proposal_id)

    def _exclude(self, proposal_id: str, round_no: int, reviewer: str, reason: str) -> None:
        self._emit(EventKind.REVIEWER_EXCLUDED, SYSTEM_ACTOR, proposal_id, {
            "proposal_id": proposal_id,
            "round": round_no,
            "reviewer": reviewer,
            "reason": reason,
        })

    def _maybe_close_challenge_round(self, proposal_id: str) -> None:
        record = self.store.record(proposal_id)
        open_round = record.open_round
        if open_round is None:
            return
        pending = [
            c for c in self.store.challenges.values()
            if c.proposal_id == proposal_id and c.round == open_round.round
            and c.answer is None
        ]
        if pending:
            return
        self._close_round(proposal_id, *mediation.consensus_over_verdicts(record))

    def _add_pool_reviewers(self, proposal_id: str, round_no: int, count: int) -> list[str]:
        record = self.store.record(proposal_id)
        available = mediation.available_pool(self._policy(proposal_id), record)
        if len(available) < count:
            raise PoolExhausted(
                f"need {count} stand-by reviewers, only {len(available)} available")
        added = available[:count]
        for reviewer in added:
            self._emit(EventKind.REVIEWER_ADDED, SYSTEM_ACTOR, proposal_id, {
                "proposal_id": proposal_id, "round": round_no, "reviewer": reviewer,
            })
        return added

    def bb3_add_reviewers(self, proposal_id: str) -> list[str]:
        with self._lock:
            record = self.store.record(proposal_id)
            open_round = record.open_round
            if open_round is None or StepKind(open_round.step_kind) != StepKind.BB3:
                raise RoundClosed("no BB3 round is open")
            return self._add_pool_reviewers(proposal_id, open_round.round,
                                            open_round.add_count)

    def post_chat(self, proposal_id: str, round_no: int, author: str, text: str,
                  signature: bytes) -> None:
        with self._lock:
            record = self.store.record(proposal_id)
            self._expire(proposal_id)
            open_round = record.open_round
            if (open_round is None or open_round.round != round_no
                    or StepKind(open_round.step_kind) != StepKind.BB4):
                raise RoundClosed("no BB4 round is open at that round number")
            if author not in mediation.participating_reviewers(record):
                raise NotActiveReviewer(f"{author} cannot post in this round")
            message = signing.chat_message(proposal_id, round_no, author, text)
            if not self.store.registry.verify(author, Channel.PRIMARY, message, signature):
                raise InvalidSignature("chat signature does not verify")
            self._emit(EventKind.CHAT_MESSAGE, author, proposal_id, {
                "proposal_id": proposal_id,
                "round": round_no,
                "author": author,
                "text": text,
                "signature": signature,
            })

    def bb5_register_meeting(self, proposal_id: str) -> bytes:
        with self._lock:
            record = self.store.record(proposal_id)
            open_round = record.open_round
            if open_round is None or StepKind(open_round.step_kind) != StepKind.BB5:
                raise NotBB5Round("no BB5 round is open")
            return self._attest_meeting(proposal_id, open_round.round)

    def _attest_meeting(self, proposal_id: str, round_no: int) -> bytes:
        token = self.rng.token(16)
        self._emit(EventKind.MEETING_ATTESTED, SYSTEM_ACTOR, proposal_id, {
            "proposal_id": proposal_id, "round": round_no, "token": token,
        })
        return token

    def meeting_token(self, proposal_id: str) -> bytes | None:
        record = self.store.record(proposal_id)
        return self.store.meeting_tokens.get((proposal_id, record.state.round))

    def commit_group_decision(self, proposal_id: str, round_no: int, reviewer: str,
                              verdict: Verdict, attestation_token: bytes | None,
                              signature: bytes) -> WorkflowState:
        with self._lock:
            record = self.store.record(proposal_id)
            self._expire(proposal_id)
            open_round = record.open_round
            if (open_round is None or open_round.round != round_no
                    or StepKind(open_round.step_kind) not in mediation.COMMITMENT_STEPS):
                raise RoundClosed("no group-decision round is open at that round number")
            if reviewer not in mediation.participating_reviewers(record):
                raise NotActiveReviewer(f"{reviewer} cannot commit in this round")
            if StepKind(open_round.step_kind) == StepKind.BB5:
                token = self.store.meeting_tokens.get((proposal_id, round_no))
                if attestation_token is None or attestation_token != token:
                    raise MissingAttestation("commitment must cite the meeting token")
            elif attestation_token is not None:
                raise SchemaViolation("attestation tokens only apply to BB5 rounds")
            message = signing.group_decision_message(
                proposal_id, round_no, reviewer, verdict.value, attestation_token)
            if not self.store.registry.verify(reviewer, Channel.PRIMARY, message, signature):
                raise InvalidSignature("group-decision signature does not verify")
            self._emit(EventKind.GROUP_DECISION_COMMITTED, reviewer, proposal_id, {
                "proposal_id": proposal_id,
                "round": round_no,
                "reviewer": reviewer,
                "verdict": verdict.value,
                "attestation_token": attestation_token,
                "signature": signature,
            })
            progress = mediation.commitment_round_progress(
                record, self.store.commitments.get((proposal_id, round_no), {}))
            if progress is not None:
                self._close_round(proposal_id, *progress)
            return self.state(proposal_id)

    def close_round(self, proposal_id: str) -> tuple[RoundOutcome, Verdict | None]:
        """Manual close; requires the completion condition or a past deadline."""
        with self._lock:
            record = self.store.record(proposal_id)
            self._expire(proposal_id)
            open_round = record.open_round
            if open_round is None:
                raise NoOpenRound("no round is open")
            kind = StepKind(open_round.step_kind)
            if kind in mediation.DECISION_STEPS:
                progress = mediation.decision_round_progress(record, open_round.round)
            elif kind == StepKind.BB2:
                pending = [c for c in self.store.challenges.values()
                           if c.proposal_id == proposal_id
                           and c.round == open_round.round and c.answer is None]
                progress = None if pending else mediation.consensus_over_verdicts(record)
            else:
                progress = mediation.commitment_round_progress(
                    record, self.store.commitments.get((proposal_id, open_round.round), {}))
            if progress is None:
                raise IncompleteRound("completion condition not met and deadline not reached")
            self._close_round(proposal_id, *progress)
            closed = record.rounds[open_round.round]
            return closed.outcome, closed.verdict

    def _close_round(self, proposal_id: str, outcome: RoundOutcome,
                     verdict: Verdict | None) -> None:
        record = self.store.record(proposal_id)
        open_round = record.open_round
        if open_round is None:
            return
        # The reviewer floor overrides any other outcome: too few participants
        # may never conclude a round on their own.
        if mediation.below_floor(record, self._policy(proposal_id)):
            outcome, verdict = RoundOutcome.BELOW_REVIEWER_FLOOR, None
        self._emit(EventKind.ROUND_CLOSED, SYSTEM_ACTOR, proposal_id, {
            "proposal_id": proposal_id,
            "round": open_round.round,
            "outcome": outcome.value,
            "verdict": verdict.value if verdict else "",
        })
        if outcome == RoundOutcome.CONSENSUS:
            final = (ProposalStatus.AUTHORIZED if verdict == Verdict.APPROVE
                     else ProposalStatus.REJECTED)
            self._status_change(proposal_id, final)
        else:
            self._advance(proposal_id, open_round.step_index + 1)

    # -- deadlines ---------------------------------------------------------------------

    def tick(self) -> None:
        """Settle every expired round; safe to call at any time."""
        with self._lock:
            for proposal_id in list(self.store.proposals):
                self._expire(proposal_id)

    def _expire(self, proposal_id: str) -> None:
        while True:
            record = self.store.record(proposal_id)
            open_round = record.open_round
            if open_round is None or self.clock.now_ms() <= open_round.deadline:
                return
            kind = StepKind(open_round.step_kind)
            if kind == StepKind.BB2:
                pending = sorted(
                    c.challenge_id for c in self.store.challenges.values()
                    if c.proposal_id == proposal_id
                    and c.round == open_round.round and c.answer is None)
                for challenge_id in pending:
                    challenge = self.store.challenges[challenge_id]
                    self._emit(EventKind.CHALLENGE_ANSWERED, SYSTEM_ACTOR, proposal_id, {
                        "proposal_id": proposal_id,
                        "round": challenge.round,
                        "challenge_id": challenge_id,
                        "reviewer": challenge.reviewer,
                        "answer": "timeout",
                        "signature": None,
                    })
                    self._exclude(proposal_id, challenge.round, challenge.reviewer,
                                  "second-channel confirmation timed out")
            outcome, verdict = mediation.deadline_outcome(
                record, kind,
                self.store.commitments.get((proposal_id, open_round.round), {}))
            self._close_round(proposal_id, outcome, verdict)

    # -- deployment and override ----------------------------------------------------------

    def acknowledge_pull(self, proposal_id: str, device: str,
                         signature: bytes) -> WorkflowState:
        with self._lock:
            record = self.store.record(proposal_id)
            state = record.state
            actor = self.store.registry.get(device)
            message = signing.ack_message(proposal_id, device)
            if not self.store.registry.verify(device, Channel.PRIMARY, message, signature):
                raise InvalidSignature("acknowledgment signature does not verify")
            if actor.role != Role.DEVICE_AGENT or not self._targets_device(record, device):
                raise WrongDevice(f"{device} is not a target of this proposal")
            if state.status == ProposalStatus.DEPLOYED:
                # Group targets: later member devices still record their pull;
                # a repeat ack from the same device is a plain no-op. Either
                # way there is exactly one Authorized -> Deployed transition.
                if device not in record.acked_by:
                    self._emit(EventKind.PULL_ACKNOWLEDGED, device, proposal_id, {
                        "proposal_id": proposal_id, "device": device,
                        "signature": signature,
                    })
                return self.state(proposal_id)
            if state.status != ProposalStatus.AUTHORIZED:
                raise NotAuthorized(f"proposal is {state.status.value}, not Authorized")
            self._emit(EventKind.PULL_ACKNOWLEDGED, device, proposal_id, {
                "proposal_id": proposal_id, "device": device, "signature": signature,
            })
            self._status_change(proposal_id, ProposalStatus.DEPLOYED)
            return self.state(proposal_id)

    def _targets_device(self, record: ProposalRecord, device: str) -> bool:
        proposal = record.proposal
        if proposal.target_kind == "device":
            return proposal.target == device
        return any(
            group.group_id == proposal.target and device in group.members
            for group in self.policies.groups
        )

    def emergency_override(self, proposal_id: str, admin: str, justification: str,
                           signature: bytes) -> WorkflowState:
        with self._lock:
            record = self.store.record(proposal_id)
            actor = self.store.registry.get(admin)
            if actor.role != Role.ADMIN:
                raise NotAdmin(f"{admin} does not hold the admin role")
            if record.state.status in TERMINAL_STATUSES:
                raise TerminalState(f"proposal is already {record.state.status.value}")
            if not justification.strip():
                raise EmptyJustification("an override requires a justification")
            message = signing.override_message(proposal_id, admin, justification)
            if not self.store.registry.verify(admin, Channel.PRIMARY, message, signature):
                raise InvalidSignature("override signature does not verify")
            self._emit(EventKind.EMERGENCY_OVERRIDE, admin, proposal_id, {
                "proposal_id": proposal_id,
                "admin": admin,
                "justification": justification,
                "signature": signature,
            })
            open_round = record.open_round
            if open_round is not None:
                self._emit(EventKind.ROUND_CLOSED, SYSTEM_ACTOR, proposal_id, {
                    "proposal_id": proposal_id,
                    "round": open_round.round,
                    "outcome": RoundOutcome.ABANDONED.value,
                    "verdict": "",
                })
            self._status_change(proposal_id, ProposalStatus.AUTHORIZED)
            return self.state(proposal_id)

    # -- reads -------------------------------------------------------------------------

    def state(self, proposal_id: str) -> WorkflowState:
        return self.store.state(proposal_id).snapshot()

    def proposal(self, proposal_id: str) -> ConfigProposal:
        return self.store.record(proposal_id).proposal

    def audit(self, proposal_id: str) -> list[LedgerEntry]:
        self.store.record(proposal_id)  # UnknownProposal if absent
        return self.ledger.get_entries(proposal_id=proposal_id)

    def verify_report(self):
        return verify_chain(self.ledger.entries(), self.peer_keys)

    def authorized_for_device(self, device: str) -> list[ConfigProposal]:
        """Authorized, not-yet-deployed proposals targeting the device, newest first."""
        result = []
        for entry in reversed(self.ledger.entries()):
            if entry.event.kind != EventKind.STATUS_CHANGED:
                continue
            if entry.event.body["new_status"] != ProposalStatus.AUTHORIZED.value:
                continue
            proposal_id = entry.event.proposal_id
            record = self.store.proposals.get(proposal_id)
            if record is None or record.state.status != ProposalStatus.AUTHORIZED:
                continue
            if self._targets_device(record, device):
                result.append(record.proposal)
        return result

    def open_challenges(self, reviewer: str | None = None):
        challenges = []
        for challenge in self.store.challenges.values():
            if challenge.answer is not None:
                continue
            if reviewer is not None and challenge.reviewer != reviewer:
                continue
            record = self.store.proposals.get(challenge.proposal_id)
            if record and record.open_round and record.open_round.round == challenge.round:
                challenges.append(challenge)
        return sorted(challenges, key=lambda c: c.challenge_id)

    def reload_policies(self, policies: PolicySet) -> None:
        """Swap the policy set; in-flight proposals keep the version they started with."""
        with self._lock:
            self.policies = policies

    def adopt(self, export_bytes: bytes) -> None:
        """Restore a node from a ledger export (startup replay)."""
        with self._lock:
            entries = read_export(export_bytes)
            report = verify_chain(entries, self.peer_keys)
            if not report:
                raise ValidationError(
                    f"refusing to adopt tampered ledger: {report.failure} at {report.failed_seq}")
            self.ledger.load_committed(entries)
            self.store = rebuild([entry.event for entry in entries])
