"""Injectable time and randomness sources.

The mediation engine, session issuer, and challenge generator never touch
the wall clock or os.urandom directly; they receive a Clock and a
RandomSource. Production wiring uses WallClock/OsRandom, scenario runs and
tests use LogicalClock/SeededRandom so that two runs of the same script
produce byte-identical ledgers.
"""

from __future__ import annotations

import os
import random
import time


class WallClock:
    def now_ms(self) -> int:
        return int(time.time() * 1000)


class LogicalClock:
    """Manually advanced clock; starts at a fixed epoch for reproducibility."""

    def __init__(self, start_ms: int = 1_700_000_000_000):
        self._now = start_ms

    def now_ms(self) -> int:
        return self._now

    def advance(self, delta_ms: int) -> int:
        if delta_ms < 0:
            raise ValueError("clock cannot move backwards")
        self._now += delta_ms
        return self._now

    def set(self, now_ms: int) -> None:
        if now_ms < self._now:
            raise ValueError("clock cannot move backwards")
        self._now = now_ms


class OsRandom:
    def token(self, n: int) -> bytes:
        return os.urandom(n)


class SeededRandom:
    """Deterministic token stream for scenario runs."""

    def __init__(self, seed: int = 0):
        self._rng = random.Random(seed)

    def token(self, n: int) -> bytes:
        return self._rng.randbytes(n)
