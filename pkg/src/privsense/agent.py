"""The on-device process.

Collection is gated twice: nothing is accepted before the user consents
to the study terms, and per-source runtime permissions are checked at
ingest time. Accepted events pass through the anonymizer before they
touch the store — the raw observation is never persisted. The store
itself is an append-only line file wiped only by opt-out.

The device is keyed by a random pseudonym; there is no login. A second
independent random token exists solely for study compensation, so the
collected data and the compensation records can never be joined.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import date, timedelta, timezone
from enum import Enum
from pathlib import Path

from . import catalog
from .anonymize import DeviceSalt, anonymize
from .catalog import (
    Conditional,
    ContextEvent,
    NotRequired,
    PermissionKind,
    PermissionRequirement,
    Required,
    ValueKind,
    Violation,
)
from .config import get_bool, get_int, load_kv, parse_kv
from .errors import (
    ConfigError,
    InvalidWindowError,
    MissingEthicsApprovalError,
    NoConsentError,
    OptedOutError,
    PddDisabledError,
)
from .records import event_line
from .runtime import Clock, Randomness, local_date, parse_utc_offset

PSEUDONYM_BYTES = 16


@dataclass(frozen=True)
class AgentConfig:
    backend_url: str
    required_pdd_days: int
    timezone: str
    ethics_approval_ref: str
    policy_version: str
    pdd_enabled: bool = True

    @classmethod
    def from_kv(cls, values: dict[str, str]) -> "AgentConfig":
        for key in ("backend_url", "timezone", "ethics_approval_ref", "policy_version"):
            if key not in values:
                raise ConfigError(f"missing required key {key!r}")
        return cls(
            backend_url=values["backend_url"],
            required_pdd_days=get_int(values, "required_pdd_days"),
            timezone=values["timezone"],
            ethics_approval_ref=values["ethics_approval_ref"],
            policy_version=values["policy_version"],
            pdd_enabled=get_bool(values, "pdd_enabled", True),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "AgentConfig":
        return cls.from_kv(load_kv(path))

    @classmethod
    def from_text(cls, text: str) -> "AgentConfig":
        return cls.from_kv(parse_kv(text))


@dataclass(frozen=True)
class ConsentRecord:
    policy_version: str
    accepted_at_ms: int
    ethics_approval_ref: str


@dataclass(frozen=True)
class PermissionGrant:
    kind: PermissionKind
    granted: bool
    changed_at_ms: int


@dataclass(frozen=True)
class DeletionRequest:
    device_pseudonym: str


class IngestOutcome(Enum):
    ACCEPTED = "accepted"
    DROPPED_NO_CONSENT = "dropped_no_consent"
    DROPPED_NO_PERMISSION = "dropped_no_permission"
    DROPPED_OPTED_OUT = "dropped_opted_out"
    REJECTED = "rejected"


@dataclass(frozen=True)
class IngestResult:
    outcome: IngestOutcome
    violations: tuple[Violation, ...] = ()

    @property
    def accepted(self) -> bool:
        return self.outcome is IngestOutcome.ACCEPTED


@dataclass(frozen=True)
class Summary:
    source_id: str
    start: date
    end: date
    zone: str
    metrics: dict[str, float]


class LocalStore:
    """Append-only event store file; one record per line, UTF-8."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding="utf-8")

    def append(self, event: ContextEvent) -> None:
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(event_line(event) + "\n")

    def wipe(self) -> None:
        self.path.write_text("", encoding="utf-8")

    def read_bytes(self) -> bytes:
        return self.path.read_bytes()


class DeviceAgent:
    """State machine for one device; single logical writer."""

    def __init__(
        self,
        config: AgentConfig,
        clock: Clock,
        randomness: Randomness,
        store_path: str | Path | None = None,
    ):
        if not config.ethics_approval_ref:
            raise MissingEthicsApprovalError(
                "refusing to initialize without an ethics approval reference"
            )
        self.config = config
        self.clock = clock
        self.zone: timezone = parse_utc_offset(config.timezone)
        # Pseudonym and enrollment token come from independent randomness
        # streams: neither is derivable from the other.
        self.device_pseudonym = randomness.token_hex(PSEUDONYM_BYTES, stream="device-pseudonym")
        self.enrollment_token = randomness.token_hex(PSEUDONYM_BYTES, stream="enrollment-token")
        self.salt = DeviceSalt(
            value=randomness.random_bytes(32, stream="device-salt"),
            created_at_ms=clock.now_ms(),
        )
        self.consent: ConsentRecord | None = None
        self.grant_history: list[PermissionGrant] = []
        self.events: list[ContextEvent] = []
        self.pdd_enabled = config.pdd_enabled
        self.pdd_completions: set[date] = set()
        self.opted_out = False
        self.last_upload_at_ms: int | None = None
        self.store: LocalStore | None = LocalStore(store_path) if store_path else None

    # -- consent and permissions (collection gates) --------------------

    def record_consent(self, policy_version: str | None = None) -> ConsentRecord:
        if self.opted_out:
            raise OptedOutError("cannot re-consent after opt-out")
        self.consent = ConsentRecord(
            policy_version=policy_version or self.config.policy_version,
            accepted_at_ms=self.clock.now_ms(),
            ethics_approval_ref=self.config.ethics_approval_ref,
        )
        return self.consent

    def set_permission(self, kind: PermissionKind, granted: bool) -> PermissionGrant:
        if self.consent is None:
            raise NoConsentError("permissions are managed only after consent")
        grant = PermissionGrant(kind=kind, granted=granted, changed_at_ms=self.clock.now_ms())
        self.grant_history.append(grant)
        return grant

    def permission_granted(self, kind: PermissionKind) -> bool:
        for grant in reversed(self.grant_history):
            if grant.kind == kind:
                return grant.granted
        return False

    def _requirement_satisfied(self, requirement: PermissionRequirement) -> bool:
        if isinstance(requirement, NotRequired):
            return True
        if isinstance(requirement, Required):
            return self.permission_granted(requirement.kind)
        if isinstance(requirement, Conditional):
            # Dependency chains are acyclic by catalog invariant.
            return self._requirement_satisfied(
                catalog.permission_requirement(requirement.depends_on)
            )
        raise TypeError(f"unexpected requirement {requirement!r}")

    # -- ingestion ------------------------------------------------------

    def ingest(self, raw_event: ContextEvent) -> IngestResult:
        """Gate, anonymize, and store one observation.

        Outcome precedence when several gates would fire: opt-out, then
        consent, then validation, then permission.
        """
        if self.opted_out:
            return IngestResult(IngestOutcome.DROPPED_OPTED_OUT)
        if self.consent is None:
            return IngestResult(IngestOutcome.DROPPED_NO_CONSENT)

        validation = catalog.validate_event(raw_event)
        if not validation.ok:
            return IngestResult(IngestOutcome.REJECTED, validation.violations)

        requirement = catalog.permission_requirement(raw_event.source_id)
        if not self._requirement_satisfied(requirement):
            return IngestResult(IngestOutcome.DROPPED_NO_PERMISSION)

        stored = replace(
            anonymize(raw_event, self.salt),
            device_pseudonym=self.device_pseudonym,
        )
        self.events.append(stored)
        if self.store is not None:
            self.store.append(stored)
        return IngestResult(IngestOutcome.ACCEPTED)

    # -- the user's view of their own data ------------------------------

    def summarize(self, source_id: str, on_date: date, granularity: str = "day") -> Summary:
        """Count/sum/min/max per numeric field over one local day or week.

        A week is the seven consecutive local dates ending at ``on_date``.
        """
        if self.consent is None:
            raise NoConsentError("summaries are available only after consent")
        source = catalog.descriptor(source_id)
        if granularity == "day":
            start = on_date
        elif granularity == "week":
            start = on_date - timedelta(days=6)
        else:
            raise ValueError(f"granularity must be 'day' or 'week', got {granularity!r}")

        metrics: dict[str, float] = {"count": 0}
        numeric = source.numeric_fields()
        for spec in numeric:
            metrics[f"{spec.name}_sum"] = 0
        for event in self.events:
            if event.source_id != source_id:
                continue
            event_date = local_date(event.timestamp_ms, self.zone)
            if not start <= event_date <= on_date:
                continue
            metrics["count"] += 1
            for spec in numeric:
                value = event.payload.get(spec.name)
                if value is None or isinstance(value, bool):
                    continue
                metrics[f"{spec.name}_sum"] += value
                low = metrics.get(f"{spec.name}_min")
                high = metrics.get(f"{spec.name}_max")
                metrics[f"{spec.name}_min"] = value if low is None else min(low, value)
                metrics[f"{spec.name}_max"] = value if high is None else max(high, value)
        return Summary(
            source_id=source_id,
            start=start,
            end=on_date,
            zone=self.config.timezone,
            metrics=metrics,
        )

    def status_line(self, selected_sources: list[str]) -> str:
        """One line for the permanent status surface, in selection order.

        Headline per source: today's sum of its first numeric field, or
        today's event count for sources without numeric fields.
        """
        if self.consent is None:
            raise NoConsentError("status line is available only after consent")
        today = local_date(self.clock.now_ms(), self.zone)
        parts = []
        for source_id in selected_sources:
            source = catalog.descriptor(source_id)
            summary = self.summarize(source_id, today, "day")
            numeric = source.numeric_fields()
            if numeric:
                value = summary.metrics[f"{numeric[0].name}_sum"]
                shown = int(value) if float(value).is_integer() else round(value, 1)
            else:
                shown = int(summary.metrics["count"])
            parts.append(f"{source_id} {shown}")
        return " | ".join(parts)

    # -- daily diary and study completion -------------------------------

    def pdd_record(self, on_date: date | None = None) -> None:
        if self.consent is None:
            raise NoConsentError("diary completion requires consent")
        if not self.pdd_enabled:
            raise PddDisabledError("daily diary tracking is disabled")
        if on_date is None:
            on_date = local_date(self.clock.now_ms(), self.zone)
        self.pdd_completions.add(on_date)

    def check_study_completion(self, required_days: int, window: tuple[date, date]) -> bool:
        """Locally decide completion; no backend call is involved."""
        if required_days < 1:
            raise ValueError("required_days must be >= 1")
        start, end = window
        if end < start:
            raise InvalidWindowError(f"window end {end} precedes start {start}")
        days_in_window = sum(1 for d in self.pdd_completions if start <= d <= end)
        return days_in_window >= required_days

    # -- opt-out ---------------------------------------------------------

    def opt_out(self) -> DeletionRequest:
        """Erase local data and stop collecting; yields the backend deletion request.

        Idempotent. Consent and grant history stay for the audit trail,
        but no event is ever accepted again.
        """
        self.opted_out = True
        self.events.clear()
        if self.store is not None:
            self.store.wipe()
        return DeletionRequest(device_pseudonym=self.device_pseudonym)


def summarize_stored_events(
    events: list[ContextEvent],
    source_id: str,
    start: date,
    end: date,
    zone: timezone,
) -> dict[str, float]:
    """Fold count/sum/min/max over an event list without an agent.

    Lets operators summarize a store file directly (the ``view`` command
    does exactly this).
    """
    source = catalog.descriptor(source_id)
    numeric = [f.name for f in source.payload_schema if f.kind in (ValueKind.INTEGER, ValueKind.REAL)]
    metrics: dict[str, float] = {"count": 0}
    for name in numeric:
        metrics[f"{name}_sum"] = 0
    for event in events:
        if event.source_id != source_id:
            continue
        if not start <= local_date(event.timestamp_ms, zone) <= end:
            continue
        metrics["count"] += 1
        for name in numeric:
            value = event.payload.get(name)
            if value is None or isinstance(value, bool):
                continue
            metrics[f"{name}_sum"] += value
            metrics[f"{name}_min"] = min(metrics.get(f"{name}_min", value), value)
            metrics[f"{name}_max"] = max(metrics.get(f"{name}_max", value), value)
    return metrics
