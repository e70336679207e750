"""Domain-separated messages for every signature in the system.

Clients (CLI, browser, device agent) and the service must byte-agree on
what gets signed, so each signed payload has exactly one builder here.
Domain prefixes stop a signature made for one purpose from verifying for
another.
"""

from __future__ import annotations

from . import canonical

DOMAIN_EVENT = b"countersign/event/v1\n"
DOMAIN_ENDORSE = b"countersign/endorse/v1\n"
DOMAIN_REGISTER = b"countersign/register/v1\n"
DOMAIN_PROPOSAL = b"countersign/proposal/v1\n"
DOMAIN_REVIEW = b"countersign/review/v1\n"
DOMAIN_CHALLENGE = b"countersign/challenge/v1\n"
DOMAIN_CHAT = b"countersign/chat/v1\n"
DOMAIN_GROUP_DECISION = b"countersign/group-decision/v1\n"
DOMAIN_ACK = b"countersign/ack/v1\n"
DOMAIN_OVERRIDE = b"countersign/override/v1\n"
DOMAIN_LOGIN = b"countersign/login/v1\n"


def event_author_message(event_bytes: bytes) -> bytes:
    return DOMAIN_EVENT + event_bytes


def endorsement_message(entry_hash: bytes) -> bytes:
    return DOMAIN_ENDORSE + canonical.fixed(entry_hash, 32)


def registration_message(
    actor_id: str, role: str, primary_pubkey: bytes, second_pubkey: bytes | None
) -> bytes:
    return DOMAIN_REGISTER + b"".join([
        canonical.text(actor_id),
        canonical.text(role),
        canonical.fixed(primary_pubkey, 32),
        canonical.optional(second_pubkey, lambda v: canonical.fixed(v, 32)),
    ])


def proposal_message(
    proposal_id: str, target_kind: str, target: str,
    payload_digest: bytes, proposer: str, note: str, created_at: int,
) -> bytes:
    return DOMAIN_PROPOSAL + b"".join([
        canonical.text(proposal_id),
        canonical.text(target_kind),
        canonical.text(target),
        canonical.fixed(payload_digest, 32),
        canonical.text(proposer),
        canonical.text(note),
        canonical.u64(created_at),
    ])


def review_message(
    proposal_id: str, round_no: int, reviewer: str,
    verdict: str, commit_message: str, channel: str,
) -> bytes:
    return DOMAIN_REVIEW + b"".join([
        canonical.text(proposal_id),
        canonical.u64(round_no),
        canonical.text(reviewer),
        canonical.text(verdict),
        canonical.text(commit_message),
        canonical.text(channel),
    ])


def challenge_response_message(challenge_id: str, nonce: bytes, answer: str) -> bytes:
    return DOMAIN_CHALLENGE + b"".join([
        canonical.text(challenge_id),
        canonical.fixed(nonce, 16),
        canonical.text(answer),
    ])


def chat_message(proposal_id: str, round_no: int, author: str, text: str) -> bytes:
    return DOMAIN_CHAT + b"".join([
        canonical.text(proposal_id),
        canonical.u64(round_no),
        canonical.text(author),
        canonical.text(text),
    ])


def group_decision_message(
    proposal_id: str, round_no: int, reviewer: str,
    verdict: str, attestation_token: bytes | None,
) -> bytes:
    return DOMAIN_GROUP_DECISION + b"".join([
        canonical.text(proposal_id),
        canonical.u64(round_no),
        canonical.text(reviewer),
        canonical.text(verdict),
        canonical.optional(attestation_token, lambda v: canonical.fixed(v, 16)),
    ])


def ack_message(proposal_id: str, device: str) -> bytes:
    return DOMAIN_ACK + canonical.text(proposal_id) + canonical.text(device)


def override_message(proposal_id: str, admin: str, justification: str) -> bytes:
    return DOMAIN_OVERRIDE + b"".join([
        canonical.text(proposal_id),
        canonical.text(admin),
        canonical.text(justification),
    ])


def login_message(nonce: bytes) -> bytes:
    return DOMAIN_LOGIN + canonical.blob(nonce)
