"""Peer-endorsed, hash-chained append-only event log.

Entries commit only when a strict majority of peers endorses them, so a
minority of tampered peers can neither forge nor erase history. The chain
layout: entry k stores the hash of entry k-1; the genesis entry points at
32 zero bytes. Endorsement signatures cover the entry hash.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol

from . import canonical, signing
from .canonical import Reader
from .errors import InvalidSignature, NoMajorityPrefix, QuorumUnavailable, SchemaViolation
from .events import Event, EventKind, encode_event, read_event
from .identity import KeyRecord, sign_with_seed, verify_with_key

HASH_SIZE = 32
GENESIS_PREV = b"\x00" * HASH_SIZE


@dataclass(frozen=True)
class LedgerEntry:
    seq: int
    prev_hash: bytes
    event: Event
    author_sig: bytes
    endorsements: tuple[tuple[str, bytes], ...]
    entry_hash: bytes


def compute_entry_hash(seq: int, prev_hash: bytes, event: Event) -> bytes:
    return hash_event_bytes(seq, prev_hash, encode_event(event))


def hash_event_bytes(seq: int, prev_hash: bytes, event_bytes: bytes) -> bytes:
    digest = hashlib.sha256()
    digest.update(canonical.u64(seq))
    digest.update(canonical.fixed(prev_hash, HASH_SIZE))
    digest.update(event_bytes)
    return digest.digest()


def quorum_size(peer_count: int) -> int:
    return peer_count // 2 + 1


# -- entry serialization ---------------------------------------------------------

def encode_entry(entry: LedgerEntry) -> bytes:
    parts = [
        canonical.u64(entry.seq),
        canonical.fixed(entry.prev_hash, HASH_SIZE),
        canonical.blob(encode_event(entry.event)),
        canonical.fixed(entry.author_sig, 64),
        canonical.u32(len(entry.endorsements)),
    ]
    for peer_id, sig in entry.endorsements:
        parts.append(canonical.text(peer_id))
        parts.append(canonical.fixed(sig, 64))
    parts.append(canonical.fixed(entry.entry_hash, HASH_SIZE))
    return b"".join(parts)


def decode_entry(data: bytes) -> LedgerEntry:
    reader = Reader(data)
    seq = reader.u64()
    prev_hash = reader.fixed(HASH_SIZE)
    event_bytes = reader.blob()
    event = read_event(Reader(event_bytes))
    author_sig = reader.fixed(64)
    count = reader.u32()
    endorsements = tuple((reader.text(), reader.fixed(64)) for _ in range(count))
    entry_hash = reader.fixed(HASH_SIZE)
    reader.expect_end()
    return LedgerEntry(
        seq=seq, prev_hash=prev_hash, event=event,
        author_sig=author_sig, endorsements=endorsements, entry_hash=entry_hash,
    )


def export_entries(entries: Iterable[LedgerEntry]) -> bytes:
    """Export file: each entry preceded by a 4-byte big-endian length."""
    out = bytearray()
    for entry in entries:
        raw = encode_entry(entry)
        out += canonical.u32(len(raw))
        out += raw
    return bytes(out)


def read_export(data: bytes) -> list[LedgerEntry]:
    reader = Reader(data)
    entries = []
    while reader.remaining():
        entries.append(decode_entry(reader.blob()))
    return entries


# -- chain verification -----------------------------------------------------------

@dataclass(frozen=True)
class ChainReport:
    ok: bool
    failed_seq: int | None = None
    failure: str | None = None  # HashMismatch | ChainBreak | InsufficientEndorsements | BadEndorsement

    def __bool__(self) -> bool:
        return self.ok


def verify_chain(
    entries: list[LedgerEntry],
    peer_keys: dict[str, bytes] | list[KeyRecord],
    quorum: int | None = None,
) -> ChainReport:
    """Check hashes, links, and endorsement quorum; report the first failure."""
    keys = _as_key_map(peer_keys)
    if quorum is None:
        quorum = quorum_size(len(keys))
    prev_hash = GENESIS_PREV
    for position, entry in enumerate(entries):
        recomputed = compute_entry_hash(entry.seq, entry.prev_hash, entry.event)
        if recomputed != entry.entry_hash:
            return ChainReport(False, entry.seq, "HashMismatch")
        if entry.seq != position or entry.prev_hash != prev_hash:
            return ChainReport(False, entry.seq, "ChainBreak")
        endorse_msg = signing.endorsement_message(entry.entry_hash)
        seen: set[str] = set()
        for peer_id, sig in entry.endorsements:
            pub = keys.get(peer_id)
            if pub is None or peer_id in seen or not verify_with_key(pub, endorse_msg, sig):
                return ChainReport(False, entry.seq, "BadEndorsement")
            seen.add(peer_id)
        if len(seen) < quorum:
            return ChainReport(False, entry.seq, "InsufficientEndorsements")
        prev_hash = entry.entry_hash
    return ChainReport(True)


def _as_key_map(peer_keys: dict[str, bytes] | list[KeyRecord]) -> dict[str, bytes]:
    if isinstance(peer_keys, dict):
        return peer_keys
    return {record.actor_id: record.primary_pubkey for record in peer_keys}


def resolve_fork(peer_views: list[list[LedgerEntry]]) -> list[LedgerEntry]:
    """Longest prefix agreed on by a strict majority of the given views.

    Views vote per position with the full canonical bytes of their entry
    (hash alone would let a tamperer keep a stale hash next to a modified
    event); a position without a strict-majority value ends the canonical
    chain. Disagreement at genesis raises NoMajorityPrefix.
    """
    if not peer_views:
        raise NoMajorityPrefix("no peer views supplied")
    majority = quorum_size(len(peer_views))
    canonical_chain: list[LedgerEntry] = []
    position = 0
    while True:
        votes: dict[bytes, list[LedgerEntry]] = {}
        for view in peer_views:
            if position < len(view):
                entry = view[position]
                votes.setdefault(encode_entry(entry), []).append(entry)
        winner = None
        for entries in votes.values():
            if len(entries) >= majority:
                winner = entries[0]
                break
        if winner is None:
            if position == 0 and votes:
                raise NoMajorityPrefix("peers disagree at genesis")
            return canonical_chain
        canonical_chain.append(winner)
        position += 1


# -- peers ------------------------------------------------------------------------

class PeerHandle(Protocol):
    peer_id: str

    def endorse(self, seq: int, prev_hash: bytes, event_bytes: bytes,
                author_id: str, author_sig: bytes) -> bytes | None: ...

    def commit(self, entry: LedgerEntry) -> bool: ...


class LocalPeer:
    """In-process peer: endorses entries that extend its head, keeps a replica.

    Each peer independently re-validates what it signs: the hash, the chain
    position, the event schema, and the principal signature embedded in the
    event body. Quorum is judged against the peer set it was provisioned with.
    """

    def __init__(
        self,
        peer_id: str,
        seed: bytes,
        peer_keys: dict[str, bytes],
        appender_keys: dict[str, bytes] | None = None,
    ):
        self.peer_id = peer_id
        self._seed = seed
        self._peer_keys = dict(peer_keys)
        self._quorum = quorum_size(len(self._peer_keys))
        # Keys trusted before any events exist: the peer set plus the appender.
        self._known_keys = dict(peer_keys)
        self._known_keys.update(appender_keys or {})
        self.chain: list[LedgerEntry] = []
        self._lock = threading.Lock()

    @property
    def head_hash(self) -> bytes:
        return self.chain[-1].entry_hash if self.chain else GENESIS_PREV

    def endorse(self, seq: int, prev_hash: bytes, event_bytes: bytes,
                author_id: str, author_sig: bytes) -> bytes | None:
        with self._lock:
            if seq != len(self.chain) or prev_hash != self.head_hash:
                return None
            try:
                event = read_event(Reader(event_bytes))
            except SchemaViolation:
                return None
            if not self._author_ok(event, event_bytes, author_id, author_sig):
                return None
            entry_hash = hash_event_bytes(seq, prev_hash, event_bytes)
            return sign_with_seed(self._seed, signing.endorsement_message(entry_hash))

    def commit(self, entry: LedgerEntry) -> bool:
        with self._lock:
            if entry.seq != len(self.chain) or entry.prev_hash != self.head_hash:
                return False
            if compute_entry_hash(entry.seq, entry.prev_hash, entry.event) != entry.entry_hash:
                return False
            endorse_msg = signing.endorsement_message(entry.entry_hash)
            seen: set[str] = set()
            for peer_id, sig in entry.endorsements:
                pub = self._peer_keys.get(peer_id)
                if pub is None or peer_id in seen or not verify_with_key(pub, endorse_msg, sig):
                    return False
                seen.add(peer_id)
            if len(seen) < self._quorum:
                return False
            self.chain.append(entry)
            if entry.event.kind == EventKind.ACTOR_REGISTERED:
                self._known_keys[entry.event.body["actor_id"]] = entry.event.body["primary_pubkey"]
            return True

    def _author_ok(self, event: Event, event_bytes: bytes,
                   author_id: str, author_sig: bytes) -> bool:
        # Self-registrations prove key possession with the embedded signature.
        if event.kind == EventKind.ACTOR_REGISTERED:
            body = event.body
            message = signing.registration_message(
                body["actor_id"], body["role"],
                body["primary_pubkey"], body["second_channel_pubkey"],
            )
            if not verify_with_key(body["primary_pubkey"], message, body["signature"]):
                return False
        author_key = self._known_keys.get(author_id)
        if author_key is None and event.kind == EventKind.ACTOR_REGISTERED \
                and author_id == event.body["actor_id"]:
            author_key = event.body["primary_pubkey"]
        if author_key is None:
            return False
        return verify_with_key(author_key, signing.event_author_message(event_bytes), author_sig)


# -- the appender -----------------------------------------------------------------

class Ledger:
    """Orders entries and gathers endorsements; commits need a strict majority.

    Appends are linearized behind a lock; readers always see a committed
    prefix. The committed list held here is the appender's replica; each
    peer keeps its own.
    """

    def __init__(
        self,
        peers: list[PeerHandle],
        author_id: str,
        author_sign: Callable[[bytes], bytes],
        persist_path: str | Path | None = None,
        author_pubkey: bytes | None = None,
    ):
        if not peers:
            raise ValueError("ledger needs at least one peer")
        self.peers = list(peers)
        self.quorum = quorum_size(len(self.peers))
        self._author_id = author_id
        self._author_sign = author_sign
        self._author_pubkey = author_pubkey
        self._entries: list[LedgerEntry] = []
        self._lock = threading.Lock()
        self._persist_path = Path(persist_path) if persist_path else None

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def head_hash(self) -> bytes:
        return self._entries[-1].entry_hash if self._entries else GENESIS_PREV

    def append(self, event: Event, author_sig: bytes | None = None) -> LedgerEntry:
        """Validate, endorse, and commit one event; returns the new entry.

        author_sig defaults to this appender's own signature; a provided
        one must verify against the appender key or nothing is appended.
        """
        event_bytes = encode_event(event)  # raises SchemaViolation on bad bodies
        with self._lock:
            seq = len(self._entries)
            prev_hash = self.head_hash
            author_message = signing.event_author_message(event_bytes)
            if author_sig is None:
                author_sig = self._author_sign(author_message)
            elif self._author_pubkey is not None and not verify_with_key(
                    self._author_pubkey, author_message, author_sig):
                raise InvalidSignature("author signature does not verify")
            entry_hash = hash_event_bytes(seq, prev_hash, event_bytes)
            endorsements: list[tuple[str, bytes]] = []
            for peer in self.peers:
                sig = peer.endorse(seq, prev_hash, event_bytes, self._author_id, author_sig)
                if sig is not None:
                    endorsements.append((peer.peer_id, sig))
            if len({p for p, _ in endorsements}) < self.quorum:
                raise QuorumUnavailable(
                    f"{len(endorsements)} of {len(self.peers)} peers endorsed; need {self.quorum}"
                )
            entry = LedgerEntry(
                seq=seq, prev_hash=prev_hash, event=event,
                author_sig=author_sig, endorsements=tuple(endorsements),
                entry_hash=entry_hash,
            )
            for peer in self.peers:
                peer.commit(entry)
            self._entries.append(entry)
            if self._persist_path:
                raw = encode_entry(entry)
                with self._persist_path.open("ab") as fh:
                    fh.write(canonical.u32(len(raw)) + raw)
        return entry

    def entries(self) -> list[LedgerEntry]:
        with self._lock:
            return list(self._entries)

    def get_entries(
        self,
        proposal_id: str | None = None,
        kind: EventKind | None = None,
        seq_range: tuple[int, int] | None = None,
    ) -> list[LedgerEntry]:
        """Committed entries matching every given filter, in seq order."""
        result = []
        for entry in self.entries():
            if proposal_id is not None and entry.event.proposal_id != proposal_id:
                continue
            if kind is not None and entry.event.kind != kind:
                continue
            if seq_range is not None and not seq_range[0] <= entry.seq <= seq_range[1]:
                continue
            result.append(entry)
        return result

    def export(self) -> bytes:
        return export_entries(self.entries())

    def load_committed(self, entries: list[LedgerEntry]) -> None:
        """Adopt a previously committed chain (startup replay)."""
        with self._lock:
            if self._entries:
                raise ValueError("ledger already has entries")
            self._entries = list(entries)
