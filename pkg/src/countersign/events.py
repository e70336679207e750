"""Ledger events: the one vocabulary every module speaks.

Every workflow action is persisted as exactly one event. Each kind has a
fixed body schema; canonical bytes feed the entry hash, the JSON form goes
over the wire. Body field order in the schema IS the canonical field order.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field
from enum import Enum

from . import canonical
from .canonical import Reader
from .errors import SchemaViolation

MAX_NOTE = 1024
MAX_COMMIT_MESSAGE = 1024
MAX_CHAT_TEXT = 2048


class EventKind(str, Enum):
    ACTOR_REGISTERED = "ActorRegistered"
    PROPOSED = "Proposed"
    REVIEW_COMMITTED = "ReviewCommitted"
    STATUS_CHANGED = "StatusChanged"
    ROUND_OPENED = "RoundOpened"
    ROUND_CLOSED = "RoundClosed"
    CONFIRMATION_REQUESTED = "ConfirmationRequested"
    CHALLENGE_ISSUED = "ChallengeIssued"
    CHALLENGE_ANSWERED = "ChallengeAnswered"
    REVIEWER_ADDED = "ReviewerAdded"
    REVIEWER_EXCLUDED = "ReviewerExcluded"
    CHAT_MESSAGE = "ChatMessage"
    GROUP_DECISION_COMMITTED = "GroupDecisionCommitted"
    MEETING_ATTESTED = "MeetingAttested"
    PULL_ACKNOWLEDGED = "PullAcknowledged"
    EMERGENCY_OVERRIDE = "EmergencyOverride"


KIND_INDEX = {kind: i for i, kind in enumerate(EventKind)}

# Field types: text, blob, u64, bool, bytes16/32/64 (fixed width), and
# opt_* variants carrying a presence byte.
BODY_SCHEMAS: dict[EventKind, tuple[tuple[str, str], ...]] = {
    EventKind.ACTOR_REGISTERED: (
        ("actor_id", "text"),
        ("role", "text"),
        ("primary_pubkey", "bytes32"),
        ("second_channel_pubkey", "opt_bytes32"),
        ("signature", "bytes64"),
    ),
    EventKind.PROPOSED: (
        ("proposal_id", "text"),
        ("target_kind", "text"),
        ("target", "text"),
        ("payload", "blob"),
        ("payload_digest", "bytes32"),
        ("proposer", "text"),
        ("note", "text"),
        ("created_at", "u64"),
        ("signature", "bytes64"),
    ),
    EventKind.REVIEW_COMMITTED: (
        ("proposal_id", "text"),
        ("round", "u64"),
        ("reviewer", "text"),
        ("verdict", "text"),
        ("commit_message", "text"),
        ("channel", "text"),
        ("signature", "bytes64"),
    ),
    EventKind.STATUS_CHANGED: (
        ("proposal_id", "text"),
        ("old_status", "text"),
        ("new_status", "text"),
        ("round", "u64"),
    ),
    EventKind.ROUND_OPENED: (
        ("proposal_id", "text"),
        ("round", "u64"),
        ("step_kind", "text"),
        ("step_index", "u64"),
        ("timeout_ms", "u64"),
        ("opened_at", "u64"),
        ("deadline", "u64"),
        ("add_count", "u64"),
    ),
    EventKind.ROUND_CLOSED: (
        ("proposal_id", "text"),
        ("round", "u64"),
        ("outcome", "text"),
        ("verdict", "text"),
    ),
    EventKind.CONFIRMATION_REQUESTED: (
        ("proposal_id", "text"),
        ("round", "u64"),
        ("reviewer", "text"),
        ("peer_messages", "text"),
    ),
    EventKind.CHALLENGE_ISSUED: (
        ("proposal_id", "text"),
        ("round", "u64"),
        ("challenge_id", "text"),
        ("reviewer", "text"),
        ("questioned_round", "u64"),
        ("questioned_verdict", "text"),
        ("nonce", "bytes16"),
    ),
    EventKind.CHALLENGE_ANSWERED: (
        ("proposal_id", "text"),
        ("round", "u64"),
        ("challenge_id", "text"),
        ("reviewer", "text"),
        ("answer", "text"),
        ("signature", "opt_bytes64"),
    ),
    EventKind.REVIEWER_ADDED: (
        ("proposal_id", "text"),
        ("round", "u64"),
        ("reviewer", "text"),
    ),
    EventKind.REVIEWER_EXCLUDED: (
        ("proposal_id", "text"),
        ("round", "u64"),
        ("reviewer", "text"),
        ("reason", "text"),
    ),
    EventKind.CHAT_MESSAGE: (
        ("proposal_id", "text"),
        ("round", "u64"),
        ("author", "text"),
        ("text", "text"),
        ("signature", "bytes64"),
    ),
    EventKind.GROUP_DECISION_COMMITTED: (
        ("proposal_id", "text"),
        ("round", "u64"),
        ("reviewer", "text"),
        ("verdict", "text"),
        ("attestation_token", "opt_bytes16"),
        ("signature", "bytes64"),
    ),
    EventKind.MEETING_ATTESTED: (
        ("proposal_id", "text"),
        ("round", "u64"),
        ("token", "bytes16"),
    ),
    EventKind.PULL_ACKNOWLEDGED: (
        ("proposal_id", "text"),
        ("device", "text"),
        ("signature", "bytes64"),
    ),
    EventKind.EMERGENCY_OVERRIDE: (
        ("proposal_id", "text"),
        ("admin", "text"),
        ("justification", "text"),
        ("signature", "bytes64"),
    ),
}

_FIXED_SIZES = {"bytes16": 16, "bytes32": 32, "bytes64": 64}

# Per-field length caps enforced at schema level so oversized free text can
# never enter the ledger regardless of which code path appends.
_TEXT_CAPS = {
    (EventKind.PROPOSED, "note"): MAX_NOTE,
    (EventKind.REVIEW_COMMITTED, "commit_message"): MAX_COMMIT_MESSAGE,
    (EventKind.CHAT_MESSAGE, "text"): MAX_CHAT_TEXT,
}


@dataclass(frozen=True)
class Event:
    kind: EventKind
    actor: str
    body: dict = field(hash=False)
    timestamp_ms: int = 0
    proposal_id: str | None = None


def validate_event(event: Event) -> None:
    schema = BODY_SCHEMAS.get(event.kind)
    if schema is None:
        raise SchemaViolation(f"unknown event kind {event.kind!r}")
    if event.kind != EventKind.ACTOR_REGISTERED and not event.proposal_id:
        raise SchemaViolation(f"{event.kind.value} requires a proposal_id")
    if not event.actor:
        raise SchemaViolation("event actor must be set")
    expected = {name for name, _ in schema}
    got = set(event.body)
    if expected != got:
        missing = expected - got
        extra = got - expected
        raise SchemaViolation(
            f"{event.kind.value} body mismatch: missing={sorted(missing)} extra={sorted(extra)}"
        )
    for name, ftype in schema:
        value = event.body[name]
        _check_field(event.kind, name, ftype, value)


def _check_field(kind: EventKind, name: str, ftype: str, value) -> None:
    opt = ftype.startswith("opt_")
    if opt:
        if value is None:
            return
        ftype = ftype[4:]
    if ftype == "text":
        if not isinstance(value, str):
            raise SchemaViolation(f"{kind.value}.{name}: expected str")
        cap = _TEXT_CAPS.get((kind, name))
        if cap is not None and len(value) > cap:
            raise SchemaViolation(f"{kind.value}.{name}: exceeds {cap} chars")
    elif ftype == "blob":
        if not isinstance(value, (bytes, bytearray)):
            raise SchemaViolation(f"{kind.value}.{name}: expected bytes")
    elif ftype == "u64":
        if not isinstance(value, int) or not 0 <= value <= canonical.U64_MAX:
            raise SchemaViolation(f"{kind.value}.{name}: expected u64")
    elif ftype == "bool":
        if not isinstance(value, bool):
            raise SchemaViolation(f"{kind.value}.{name}: expected bool")
    elif ftype in _FIXED_SIZES:
        size = _FIXED_SIZES[ftype]
        if not isinstance(value, (bytes, bytearray)) or len(value) != size:
            raise SchemaViolation(f"{kind.value}.{name}: expected {size} bytes")
    else:
        raise SchemaViolation(f"{kind.value}.{name}: unknown field type {ftype}")


def _encode_field(ftype: str, value) -> bytes:
    if ftype.startswith("opt_"):
        inner = ftype[4:]
        return canonical.optional(value, lambda v: _encode_field(inner, v))
    if ftype == "text":
        return canonical.text(value)
    if ftype == "blob":
        return canonical.blob(bytes(value))
    if ftype == "u64":
        return canonical.u64(value)
    if ftype == "bool":
        return canonical.boolean(value)
    return canonical.fixed(bytes(value), _FIXED_SIZES[ftype])


def _decode_field(reader: Reader, ftype: str):
    if ftype.startswith("opt_"):
        inner = ftype[4:]
        return reader.optional(lambda: _decode_field(reader, inner))
    if ftype == "text":
        return reader.text()
    if ftype == "blob":
        return reader.blob()
    if ftype == "u64":
        return reader.u64()
    if ftype == "bool":
        return reader.boolean()
    return reader.fixed(_FIXED_SIZES[ftype])


def encode_event(event: Event) -> bytes:
    """Canonical bytes; the input to the entry hash and the export file."""
    validate_event(event)
    parts = [
        canonical.u8(KIND_INDEX[event.kind]),
        canonical.optional(event.proposal_id, canonical.text),
        canonical.text(event.actor),
        canonical.u64(event.timestamp_ms),
    ]
    for name, ftype in BODY_SCHEMAS[event.kind]:
        parts.append(_encode_field(ftype, event.body[name]))
    return b"".join(parts)


def decode_event(data: bytes) -> Event:
    reader = Reader(data)
    event = read_event(reader)
    reader.expect_end()
    return event


def read_event(reader: Reader) -> Event:
    index = reader.u8()
    kinds = list(EventKind)
    if index >= len(kinds):
        raise SchemaViolation(f"unknown event kind index {index}")
    kind = kinds[index]
    proposal_id = reader.optional(reader.text)
    actor = reader.text()
    timestamp_ms = reader.u64()
    body = {}
    for name, ftype in BODY_SCHEMAS[kind]:
        body[name] = _decode_field(reader, ftype)
    event = Event(
        kind=kind, actor=actor, body=body,
        timestamp_ms=timestamp_ms, proposal_id=proposal_id,
    )
    validate_event(event)
    return event


# -- JSON wire form (snake_case keys, binary as base64) -------------------------

def _b64(value: bytes) -> str:
    return base64.b64encode(bytes(value)).decode("ascii")


def _unb64(value: str) -> bytes:
    try:
        return base64.b64decode(value, validate=True)
    except Exception as exc:
        raise SchemaViolation(f"invalid base64: {value[:32]!r}") from exc


def event_to_json(event: Event) -> dict:
    body = {}
    for name, ftype in BODY_SCHEMAS[event.kind]:
        value = event.body[name]
        base = ftype[4:] if ftype.startswith("opt_") else ftype
        if value is not None and (base == "blob" or base in _FIXED_SIZES):
            value = _b64(value)
        body[name] = value
    return {
        "kind": event.kind.value,
        "proposal_id": event.proposal_id,
        "actor": event.actor,
        "timestamp_ms": event.timestamp_ms,
        "body": body,
    }


def event_from_json(doc: dict) -> Event:
    try:
        kind = EventKind(doc["kind"])
    except (KeyError, ValueError) as exc:
        raise SchemaViolation(f"bad event kind in JSON: {doc.get('kind')!r}") from exc
    raw_body = doc.get("body") or {}
    body = {}
    for name, ftype in BODY_SCHEMAS[kind]:
        value = raw_body.get(name)
        base = ftype[4:] if ftype.startswith("opt_") else ftype
        if value is not None and (base == "blob" or base in _FIXED_SIZES):
            value = _unb64(value)
        body[name] = value
    event = Event(
        kind=kind,
        actor=doc.get("actor", ""),
        body=body,
        timestamp_ms=int(doc.get("timestamp_ms", 0)),
        proposal_id=doc.get("proposal_id"),
    )
    validate_event(event)
    return event
