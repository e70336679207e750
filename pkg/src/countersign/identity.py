"""Actors and their Ed25519 keys.

Each actor owns a primary keypair; reviewers additionally own a
second-channel keypair so a decision can be confirmed from a device other
than the (possibly compromised) one that submitted it. Secret keys live in
keystore files on the actor's own machine; the service and the ledger peers
only ever see public keys.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from cryptography.exceptions import InvalidSignature as _BadSig
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import (
    DuplicateId,
    MissingSecondChannelKey,
    NoSuchChannel,
    SchemaViolation,
    UnknownActor,
    ValidationError,
)

KEY_SIZE = 32
SIG_SIZE = 64
MAX_ACTOR_ID = 64

KEYSTORE_VERSION = 1


class Role(str, Enum):
    PROPOSER = "proposer"
    REVIEWER = "reviewer"
    ADMIN = "admin"
    PEER = "peer"
    DEVICE_AGENT = "device_agent"


class Channel(str, Enum):
    PRIMARY = "primary"
    SECOND = "second"


@dataclass(frozen=True)
class KeyRecord:
    """Public half of an actor's keys as held by the service."""

    actor_id: str
    primary_pubkey: bytes
    second_channel_pubkey: bytes | None = None

    def pubkey(self, channel: Channel) -> bytes:
        if channel == Channel.PRIMARY:
            return self.primary_pubkey
        if self.second_channel_pubkey is None:
            raise NoSuchChannel(f"{self.actor_id} has no second-channel key")
        return self.second_channel_pubkey


@dataclass(frozen=True)
class Actor:
    actor_id: str
    role: Role
    keys: KeyRecord


# -- raw Ed25519 helpers -------------------------------------------------------

def generate_seed() -> bytes:
    key = Ed25519PrivateKey.generate()
    return key.private_bytes(
        serialization.Encoding.Raw,
        serialization.PrivateFormat.Raw,
        serialization.NoEncryption(),
    )


def public_key(seed: bytes) -> bytes:
    priv = Ed25519PrivateKey.from_private_bytes(seed)
    return priv.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )


def sign_with_seed(seed: bytes, message: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(seed).sign(message)


def verify_with_key(pubkey: bytes, message: bytes, signature: bytes) -> bool:
    if len(signature) != SIG_SIZE or len(pubkey) != KEY_SIZE:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(pubkey).verify(signature, message)
        return True
    except (_BadSig, ValueError):
        return False


# -- keystore files ------------------------------------------------------------
# Layout: 1 version byte || 32-byte primary secret || optional 32-byte
# second-channel secret. File length is therefore 33 or 65 bytes.

@dataclass
class Keystore:
    """One actor's secret keys, loaded from or saved to a keystore file."""

    primary_seed: bytes
    second_seed: bytes | None = None

    @classmethod
    def generate(cls, with_second_channel: bool = False) -> "Keystore":
        return cls(
            primary_seed=generate_seed(),
            second_seed=generate_seed() if with_second_channel else None,
        )

    @classmethod
    def load(cls, path: str | Path) -> "Keystore":
        raw = Path(path).read_bytes()
        if len(raw) not in (1 + KEY_SIZE, 1 + 2 * KEY_SIZE):
            raise SchemaViolation(f"keystore {path}: unexpected length {len(raw)}")
        if raw[0] != KEYSTORE_VERSION:
            raise SchemaViolation(f"keystore {path}: unsupported version {raw[0]}")
        primary = raw[1:1 + KEY_SIZE]
        second = raw[1 + KEY_SIZE:] or None
        return cls(primary_seed=primary, second_seed=second)

    def save(self, path: str | Path) -> None:
        raw = bytes([KEYSTORE_VERSION]) + self.primary_seed + (self.second_seed or b"")
        Path(path).write_bytes(raw)

    def key_record(self, actor_id: str) -> KeyRecord:
        return KeyRecord(
            actor_id=actor_id,
            primary_pubkey=public_key(self.primary_seed),
            second_channel_pubkey=(
                public_key(self.second_seed) if self.second_seed else None
            ),
        )

    def sign(self, channel: Channel, message: bytes) -> bytes:
        if channel == Channel.PRIMARY:
            return sign_with_seed(self.primary_seed, message)
        if self.second_seed is None:
            raise NoSuchChannel("keystore has no second-channel key")
        return sign_with_seed(self.second_seed, message)


# -- service-side registry -------------------------------------------------------

def validate_registration(actor_id: str, role: Role, keys: KeyRecord) -> None:
    problems = []
    if not actor_id or len(actor_id) > MAX_ACTOR_ID:
        problems.append(f"actor id must be 1..{MAX_ACTOR_ID} chars")
    if len(keys.primary_pubkey) != KEY_SIZE:
        problems.append("primary pubkey must be 32 bytes")
    if keys.second_channel_pubkey is not None:
        if len(keys.second_channel_pubkey) != KEY_SIZE:
            problems.append("second-channel pubkey must be 32 bytes")
        if keys.second_channel_pubkey == keys.primary_pubkey:
            problems.append("primary and second-channel keys must differ")
    if problems:
        raise ValidationError(problems)
    if role == Role.REVIEWER and keys.second_channel_pubkey is None:
        raise MissingSecondChannelKey(f"reviewer {actor_id} needs a second-channel key")


class Registry:
    """Public-key registry; mutated only by the event reducer."""

    def __init__(self):
        self._actors: dict[str, Actor] = {}

    def __contains__(self, actor_id: str) -> bool:
        return actor_id in self._actors

    def __len__(self) -> int:
        return len(self._actors)

    def add(self, actor: Actor) -> None:
        if actor.actor_id in self._actors:
            raise DuplicateId(f"actor {actor.actor_id} already registered")
        self._actors[actor.actor_id] = actor

    def get(self, actor_id: str) -> Actor:
        try:
            return self._actors[actor_id]
        except KeyError:
            raise UnknownActor(f"no actor {actor_id!r}") from None

    def verify(self, actor_id: str, channel: Channel, message: bytes, sig: bytes) -> bool:
        actor = self.get(actor_id)
        return verify_with_key(actor.keys.pubkey(channel), message, sig)

    def actors(self) -> list[Actor]:
        return list(self._actors.values())
