"""Injected runtime capabilities: clocks, randomness, and instant handling.

Every component takes its clock and randomness as constructor arguments so
that whole end-to-end runs are reproducible from a seed. Production code
uses ``SystemClock``/``SystemRandomness``; the simulator and the tests use
the virtual/seeded variants.

Instants are UTC epoch milliseconds (``int``) everywhere in process; the
wire and file formats render them as RFC 3339 text.
"""

from __future__ import annotations

import random
import secrets
import time
from datetime import date, datetime, timedelta, timezone
from typing import Protocol

MS_PER_SECOND = 1_000
MS_PER_MINUTE = 60 * MS_PER_SECOND
MS_PER_HOUR = 60 * MS_PER_MINUTE
MS_PER_DAY = 24 * MS_PER_HOUR

# 9999-12-31T23:59:59.999Z; timestamps past this are not valid instants.
MAX_TIMESTAMP_MS = 253_402_300_799_999


class Clock(Protocol):
    def now_ms(self) -> int: ...

    def sleep_ms(self, duration_ms: int) -> None: ...


class SystemClock:
    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def sleep_ms(self, duration_ms: int) -> None:
        time.sleep(duration_ms / 1000.0)


class VirtualClock:
    """Deterministic clock advanced explicitly by its owner.

    ``sleep_ms`` advances virtual time, so retry backoff runs in
    microseconds of real time while keeping its scheduling semantics.
    """

    def __init__(self, start_ms: int = 0):
        self._now_ms = start_ms

    def now_ms(self) -> int:
        return self._now_ms

    def sleep_ms(self, duration_ms: int) -> None:
        self._now_ms += duration_ms

    def advance_to(self, instant_ms: int) -> None:
        if instant_ms < self._now_ms:
            raise ValueError("virtual clock cannot move backwards")
        self._now_ms = instant_ms

    def advance_ms(self, delta_ms: int) -> None:
        self.advance_to(self._now_ms + delta_ms)


class Randomness(Protocol):
    """Named independent randomness streams.

    Distinct stream names yield values with no derivable relationship;
    the device pseudonym and the enrollment token rely on this to stay
    unlinkable.
    """

    def token_hex(self, nbytes: int, stream: str) -> str: ...

    def random_bytes(self, nbytes: int, stream: str) -> bytes: ...


class SystemRandomness:
    """Cryptographically strong randomness; stream names are irrelevant."""

    def token_hex(self, nbytes: int, stream: str) -> str:
        return secrets.token_hex(nbytes)

    def random_bytes(self, nbytes: int, stream: str) -> bytes:
        return secrets.token_bytes(nbytes)


class SeededRandomness:
    """Reproducible randomness. One independent PRNG per stream name."""

    def __init__(self, seed: int | str):
        self._seed = seed
        self._streams: dict[str, random.Random] = {}

    def _rng(self, stream: str) -> random.Random:
        rng = self._streams.get(stream)
        if rng is None:
            # String seeding hashes with SHA-512 internally, so it is
            # stable across processes regardless of PYTHONHASHSEED.
            rng = random.Random(f"{self._seed}/{stream}")
            self._streams[stream] = rng
        return rng

    def token_hex(self, nbytes: int, stream: str) -> str:
        return self.random_bytes(nbytes, stream).hex()

    def random_bytes(self, nbytes: int, stream: str) -> bytes:
        return self._rng(stream).randbytes(nbytes)


def to_rfc3339(instant_ms: int) -> str:
    """Render an epoch-ms instant as RFC 3339 text with milliseconds."""
    dt = datetime.fromtimestamp(instant_ms / 1000.0, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S.") + f"{instant_ms % 1000:03d}Z"


def from_rfc3339(text: str) -> int:
    normalized = text.replace("Z", "+00:00")
    dt = datetime.fromisoformat(normalized)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp without offset: {text!r}")
    return int(dt.timestamp() * 1000)


def parse_utc_offset(spec: str) -> timezone:
    """Parse the fixed-offset timezone syntax used by config files.

    Accepted forms: ``UTC``, ``Z``, ``+HH:MM``, ``-HH:MM``.
    Fixed offsets keep local-date bucketing independent of any tz database.
    """
    spec = spec.strip()
    if spec in ("UTC", "Z", "utc", ""):
        return timezone.utc
    sign = 1
    if spec[0] == "+":
        body = spec[1:]
    elif spec[0] == "-":
        sign = -1
        body = spec[1:]
    else:
        raise ValueError(f"bad timezone offset {spec!r}; use UTC or ±HH:MM")
    try:
        hours, minutes = body.split(":")
        delta = timedelta(hours=int(hours), minutes=int(minutes))
    except Exception as exc:
        raise ValueError(f"bad timezone offset {spec!r}; use UTC or ±HH:MM") from exc
    return timezone(sign * delta)


def local_date(instant_ms: int, zone: timezone) -> date:
    return datetime.fromtimestamp(instant_ms / 1000.0, tz=zone).date()
