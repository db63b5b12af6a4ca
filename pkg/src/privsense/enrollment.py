"""Study compensation enrollment, unlinkable to collected data.

Participants qualify by completing the daily diary; the *app* checks the
requirement locally and the enrollment only receives contact data, the
device's independent enrollment token, and the attested day count. No
device pseudonym, batch id, or event-derived value is ever accepted
here, so an equi-join between this store and the backend store is empty
by construction — ``unlinkability_check`` verifies exactly that.
"""

from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass
from pathlib import Path

from .errors import EmptyContactError, MalformedExportError
from .runtime import Clock, SystemClock, to_rfc3339


@dataclass(frozen=True)
class EnrollmentRecord:
    contact: str
    enrollment_token: str
    attested_days: int
    enrolled_at_ms: int


@dataclass(frozen=True)
class EnrollResult:
    accepted: bool
    reason: str | None = None  # "duplicate" | "insufficient"


class EnrollmentService:
    """Accepts one compensation enrollment per token; runs the raffle."""

    def __init__(self, required_days: int, data_dir: str | Path | None = None,
                 clock: Clock | None = None):
        if required_days < 1:
            raise ValueError("required_days must be >= 1")
        self.required_days = required_days
        self.clock = clock or SystemClock()
        self.data_dir = Path(data_dir) if data_dir else None
        self._records: list[EnrollmentRecord] = []
        self._tokens: set[str] = set()
        self._lock = threading.Lock()
        if self.data_dir:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self._recover()

    def _log_path(self) -> Path:
        assert self.data_dir is not None
        return self.data_dir / "enrollments.log"

    def _recover(self) -> None:
        path = self._log_path()
        if not path.is_file():
            return
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            raw = json.loads(line)
            record = EnrollmentRecord(
                contact=raw["contact"],
                enrollment_token=raw["enrollment_token"],
                attested_days=int(raw["attested_days"]),
                enrolled_at_ms=int(raw["enrolled_at_ms"]),
            )
            self._records.append(record)
            self._tokens.add(record.enrollment_token)

    def _persist(self, record: EnrollmentRecord) -> None:
        if self.data_dir is None:
            return
        with self._log_path().open("a", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "contact": record.contact,
                "enrollment_token": record.enrollment_token,
                "attested_days": record.attested_days,
                "enrolled_at_ms": record.enrolled_at_ms,
            }, separators=(",", ":")) + "\n")

    # -- operations --------------------------------------------------------

    def enroll(self, contact: str, enrollment_token: str, attested_days: int) -> EnrollResult:
        """Store an enrollment if the attestation qualifies and the token is new.

        An insufficient attestation does not burn the token; the
        participant may attest again after more diary days.
        """
        if not contact:
            raise EmptyContactError("contact information must be nonempty")
        if not enrollment_token:
            raise ValueError("enrollment_token must be nonempty")
        with self._lock:
            if enrollment_token in self._tokens:
                return EnrollResult(accepted=False, reason="duplicate")
            if attested_days < self.required_days:
                return EnrollResult(accepted=False, reason="insufficient")
            record = EnrollmentRecord(
                contact=contact,
                enrollment_token=enrollment_token,
                attested_days=attested_days,
                enrolled_at_ms=self.clock.now_ms(),
            )
            self._records.append(record)
            self._tokens.add(enrollment_token)
            self._persist(record)
        return EnrollResult(accepted=True)

    def records(self) -> list[EnrollmentRecord]:
        with self._lock:
            return list(self._records)

    def draw_raffle(self, seed: int, n: int) -> list[EnrollmentRecord]:
        """Draw ``n`` distinct winners, reproducibly for a given seed.

        Algorithm (fixed; operators can re-run a published draw): order
        records by (enrolled_at, token), then repeatedly remove the record
        at ``Random(seed).randrange(len(pool))``. ``n >= len(records)``
        returns everyone.
        """
        if n < 0:
            raise ValueError("n must be >= 0")
        pool = sorted(self.records(), key=lambda r: (r.enrolled_at_ms, r.enrollment_token))
        rng = random.Random(seed)
        winners: list[EnrollmentRecord] = []
        for _ in range(min(n, len(pool))):
            winners.append(pool.pop(rng.randrange(len(pool))))
        return winners

    def export_manifest(self) -> bytes:
        """Line-delimited export of enrollment records."""
        lines = []
        for record in self.records():
            lines.append(json.dumps({
                "contact": record.contact,
                "enrollment_token": record.enrollment_token,
                "attested_days": record.attested_days,
                "enrolled_at": to_rfc3339(record.enrolled_at_ms),
            }, separators=(",", ":")))
        return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def _parse_manifest(export: bytes, required_keys: tuple[str, ...]) -> list[dict]:
    try:
        text = export.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedExportError(f"export is not UTF-8: {exc}") from exc
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except ValueError as exc:
            raise MalformedExportError(f"line {lineno}: not a JSON record") from exc
        if not isinstance(row, dict) or any(key not in row for key in required_keys):
            raise MalformedExportError(f"line {lineno}: missing keys {required_keys}")
        rows.append(row)
    return rows


def unlinkability_check(backend_export: bytes, enrollment_export: bytes) -> bool:
    """True when the two stores cannot be joined.

    Checks that the identifier sets (device pseudonyms and batch ids on
    one side, enrollment tokens on the other) are disjoint, and that no
    enrollment string value occurs anywhere in the backend export bytes.
    """
    backend_rows = _parse_manifest(backend_export, ("device_pseudonym", "batch_ids"))
    enrollment_rows = _parse_manifest(
        enrollment_export, ("contact", "enrollment_token", "attested_days")
    )

    backend_identifiers: set[str] = set()
    for row in backend_rows:
        backend_identifiers.add(str(row["device_pseudonym"]))
        backend_identifiers.update(str(b) for b in row["batch_ids"])

    enrollment_identifiers = {str(row["enrollment_token"]) for row in enrollment_rows}
    if backend_identifiers & enrollment_identifiers:
        return False

    # String values only: numeric fields (attested day counts, instants)
    # collide on digits without carrying linkage.
    for row in enrollment_rows:
        for value in row.values():
            if isinstance(value, str) and value and value.encode("utf-8") in backend_export:
                return False
    return True
