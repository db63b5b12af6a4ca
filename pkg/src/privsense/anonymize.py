"""On-device anonymization and leakage auditing.

Anonymization happens on the device, before any persistence or transfer:
a compromised backend only ever sees already-anonymized records. Per-field
actions derive 1:1 from the catalog sensitivities — identifying strings
(phone numbers, Wifi SSIDs, Bluetooth addresses) are replaced by salted
one-way digests, content fields are removed outright.

``PlaintextRegistry`` and ``audit_batch`` form the verification side: the
simulator registers every sensitive raw string it fabricates, and the
audit proves none of them survived into any serialized output.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from . import catalog, leakscan
from .catalog import ContextEvent, Sensitivity
from .errors import EmptyInputError, InvalidEventError, UnknownSourceError

SALT_LEN = 32
DIGEST_HEX_LEN = 64


@dataclass(frozen=True)
class DeviceSalt:
    """Per-device hashing salt. Lives only on the device, never in output.

    The repr is masked so the raw bytes cannot end up in logs or reports
    by accident; leak audits additionally scan for the hex form.
    """

    value: bytes
    created_at_ms: int

    def __post_init__(self):
        if len(self.value) != SALT_LEN:
            raise ValueError(f"salt must be {SALT_LEN} bytes, got {len(self.value)}")

    def __repr__(self) -> str:
        return f"DeviceSalt(<{SALT_LEN} bytes>, created_at_ms={self.created_at_ms})"


class Action(Enum):
    PASS_THROUGH = "pass_through"
    PSEUDONYMIZE = "pseudonymize"
    DROP = "drop"


_SENSITIVITY_ACTION = {
    Sensitivity.CLEAR: Action.PASS_THROUGH,
    Sensitivity.PSEUDONYMIZE: Action.PSEUDONYMIZE,
    Sensitivity.DROP: Action.DROP,
}


@dataclass(frozen=True)
class AnonymizationPolicy:
    source_id: str
    actions: tuple[tuple[str, Action], ...]

    def action_for(self, field: str) -> Action:
        for name, action in self.actions:
            if name == field:
                return action
        return Action.PASS_THROUGH


def policy_of(source_id: str) -> AnonymizationPolicy:
    """Policy for one source, derived from the catalog sensitivities."""
    source = catalog.descriptor(source_id)
    return AnonymizationPolicy(
        source_id=source_id,
        actions=tuple(
            (f.name, _SENSITIVITY_ACTION[f.sensitivity]) for f in source.payload_schema
        ),
    )


def pseudonymize_token(raw: str, salt: DeviceSalt) -> str:
    """Salted one-way digest of an identifying string.

    SHA-256 over salt||raw, rendered as 64 lowercase hex chars. Stable for
    a fixed (raw, salt) pair, so per-device frequency analysis still works
    without revealing the identity behind the token.
    """
    if not raw:
        raise EmptyInputError("cannot pseudonymize an empty string")
    return hashlib.sha256(salt.value + raw.encode("utf-8")).hexdigest()


def is_digest_shaped(value: object) -> bool:
    return (
        isinstance(value, str)
        and len(value) == DIGEST_HEX_LEN
        and all(c in "0123456789abcdef" for c in value)
    )


def anonymize(event: ContextEvent, salt: DeviceSalt) -> ContextEvent:
    """Apply the source's policy to an event and mark it anonymized.

    Already-anonymized events are returned unchanged, which makes the
    operation idempotent. Timestamps and the source id never change.
    """
    if event.anonymized:
        return event

    result = catalog.validate_event(event)
    if not result.ok:
        if any(v.field == "source_id" for v in result.violations):
            raise UnknownSourceError(event.source_id)
        raise InvalidEventError(result.violations)

    policy = policy_of(event.source_id)
    payload: dict[str, object] = {}
    for name, value in event.payload.items():
        action = policy.action_for(name)
        if action is Action.DROP:
            continue
        if action is Action.PSEUDONYMIZE:
            payload[name] = pseudonymize_token(str(value), salt)
        else:
            payload[name] = value
    return replace(event, payload=payload, anonymized=True)


class PlaintextRegistry:
    """Append-only ledger of every sensitive raw string a run fabricated.

    Test-only oracle: if a registered string shows up in any serialized
    byte range, anonymization failed somewhere.
    """

    def __init__(self, strings: Iterable[str] = ()):
        self._ordered: list[str] = []
        self._seen: set[str] = set()
        for s in strings:
            self.add(s)

    def add(self, raw: str) -> None:
        if "\n" in raw:
            raise ValueError("registry strings must be single-line")
        if raw and raw not in self._seen:
            self._seen.add(raw)
            self._ordered.append(raw)

    def __contains__(self, raw: str) -> bool:
        return raw in self._seen

    def __iter__(self) -> Iterator[str]:
        return iter(self._ordered)

    def __len__(self) -> int:
        return len(self._ordered)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self._ordered) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PlaintextRegistry":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line for line in lines if line)


@dataclass(frozen=True)
class LeakViolation:
    plaintext: str
    offset: int

    def __str__(self) -> str:
        return f"plaintext {self.plaintext!r} found at byte offset {self.offset}"


def audit_batch(serialized: bytes, registry: PlaintextRegistry) -> list[LeakViolation]:
    """Report every registered plaintext occurring in the given bytes.

    An empty result means no known sensitive string leaked into this
    serialization. Matching is raw byte substring (UTF-8 encoded needle).
    """
    needles = [s.encode("utf-8") for s in registry]
    strings = list(registry)
    return [
        LeakViolation(plaintext=strings[idx], offset=offset)
        for idx, offset in leakscan.scan(serialized, needles)
    ]
