"""Canonical byte serialization shared by hashing, signing, and file formats.

Layout rules: fields are written in fixed declaration order, integers are
big-endian fixed-width, strings are length-prefixed UTF-8, and optional
fields carry a one-byte presence marker. Two processes that serialize the
same value must produce identical bytes, so all ledger hashes agree across
peers.
"""

from __future__ import annotations

from .errors import SchemaViolation

U32_MAX = 2**32 - 1
U64_MAX = 2**64 - 1


def u8(value: int) -> bytes:
    if not 0 <= value <= 0xFF:
        raise SchemaViolation(f"u8 out of range: {value}")
    return value.to_bytes(1, "big")


def u32(value: int) -> bytes:
    if not 0 <= value <= U32_MAX:
        raise SchemaViolation(f"u32 out of range: {value}")
    return value.to_bytes(4, "big")


def u64(value: int) -> bytes:
    if not 0 <= value <= U64_MAX:
        raise SchemaViolation(f"u64 out of range: {value}")
    return value.to_bytes(8, "big")


def boolean(value: bool) -> bytes:
    return b"\x01" if value else b"\x00"


def blob(value: bytes) -> bytes:
    if len(value) > U32_MAX:
        raise SchemaViolation("blob too large")
    return u32(len(value)) + value


def text(value: str) -> bytes:
    return blob(value.encode("utf-8"))


def fixed(value: bytes, size: int) -> bytes:
    if len(value) != size:
        raise SchemaViolation(f"expected {size} bytes, got {len(value)}")
    return value


def optional(value, encode) -> bytes:
    if value is None:
        return b"\x00"
    return b"\x01" + encode(value)


class Reader:
    """Cursor over canonical bytes; raises SchemaViolation on truncation."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise SchemaViolation("truncated canonical data")
        chunk = self._data[self._pos:self._pos + n]
        self._pos += n
        return chunk

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return int.from_bytes(self._take(4), "big")

    def u64(self) -> int:
        return int.from_bytes(self._take(8), "big")

    def boolean(self) -> bool:
        flag = self.u8()
        if flag not in (0, 1):
            raise SchemaViolation(f"invalid boolean byte: {flag}")
        return flag == 1

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        raw = self.blob()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaViolation("invalid UTF-8 in canonical text") from exc

    def fixed(self, size: int) -> bytes:
        return self._take(size)

    def optional(self, decode):
        flag = self.u8()
        if flag == 0:
            return None
        if flag != 1:
            raise SchemaViolation(f"invalid presence byte: {flag}")
        return decode()

    def remaining(self) -> int:
        return len(self._data) - self._pos

    def expect_end(self) -> None:
        if self.remaining():
            raise SchemaViolation(f"{self.remaining()} trailing bytes after canonical value")
