"""Catalog of collectible smartphone context-data sources.

Eighteen sources grouped into four interaction categories (physical
conditions and activity, device status and usage, core-function usage,
and app usage), each with its runtime permission requirement and its
payload schema. The schema's per-field sensitivity drives the on-device
anonymization policy: ``PSEUDONYMIZE`` fields are replaced by salted
digests, ``DROP`` fields are removed entirely before anything is stored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from .errors import UnknownSourceError
from .runtime import MAX_TIMESTAMP_MS

SCHEMA_VERSION = 1


class Category(Enum):
    PHYSICAL = "physical"
    DEVICE = "device"
    CORE_FUNCTIONS = "core_functions"
    APPS = "apps"


class PermissionKind(Enum):
    LOCATION = "location"
    MICROPHONE = "microphone"
    CALLS = "calls"
    PHOTOS = "photos"
    NOTIFICATIONS = "notifications"
    APP_USAGE = "app_usage"


class ValueKind(Enum):
    INTEGER = "integer"
    REAL = "real"
    TEXT = "text"
    BOOLEAN = "boolean"
    TIMESTAMP = "timestamp"


class Sensitivity(Enum):
    CLEAR = "clear"
    PSEUDONYMIZE = "pseudonymize"
    DROP = "drop"


@dataclass(frozen=True)
class NotRequired:
    def to_record(self) -> dict:
        return {"type": "not_required"}


@dataclass(frozen=True)
class Required:
    kind: PermissionKind

    def to_record(self) -> dict:
        return {"type": "required", "kind": self.kind.value}


@dataclass(frozen=True)
class Conditional:
    """Collectible only while another source's requirement is satisfied."""

    depends_on: str
    reason: str

    def to_record(self) -> dict:
        return {"type": "conditional", "depends_on": self.depends_on, "reason": self.reason}


PermissionRequirement = NotRequired | Required | Conditional


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: ValueKind
    sensitivity: Sensitivity = Sensitivity.CLEAR


@dataclass(frozen=True)
class DataSourceDescriptor:
    source_id: str
    categories: frozenset[Category]
    permission: PermissionRequirement
    payload_schema: tuple[FieldSpec, ...]
    description: str

    def schema_field(self, name: str) -> FieldSpec | None:
        for spec in self.payload_schema:
            if spec.name == name:
                return spec
        return None

    def numeric_fields(self) -> tuple[FieldSpec, ...]:
        return tuple(
            spec for spec in self.payload_schema
            if spec.kind in (ValueKind.INTEGER, ValueKind.REAL)
        )


def _src(source_id, categories, permission, schema, description):
    return DataSourceDescriptor(
        source_id=source_id,
        categories=frozenset(categories),
        permission=permission,
        payload_schema=tuple(schema),
        description=description,
    )


_PHY = Category.PHYSICAL
_DEV = Category.DEVICE
_CORE = Category.CORE_FUNCTIONS
_APPS = Category.APPS

_CLEAR = Sensitivity.CLEAR
_PSEUDO = Sensitivity.PSEUDONYMIZE
_DROP = Sensitivity.DROP

# Catalog rows, in fixed presentation order. The order is part of the
# contract: manifests, simulators, and merge tie-breaking all rely on it.
_CATALOG: tuple[DataSourceDescriptor, ...] = (
    _src(
        "location", {_PHY}, Required(PermissionKind.LOCATION),
        [
            FieldSpec("lat", ValueKind.REAL),
            FieldSpec("lon", ValueKind.REAL),
            FieldSpec("accuracy_m", ValueKind.REAL),
        ],
        "Geographic position fixes at full precision.",
    ),
    _src(
        "weather", {_PHY},
        Conditional("location", "weather lookups need a position fix, so collection is tied to the location grant"),
        [
            FieldSpec("temp_c", ValueKind.REAL),
            FieldSpec("humidity_pct", ValueKind.REAL),
        ],
        "Ambient weather at the device's position.",
    ),
    _src(
        "ambient_light", {_PHY}, NotRequired(),
        [FieldSpec("lux", ValueKind.REAL)],
        "Ambient light sensor level while the screen is active.",
    ),
    _src(
        "ambient_noise", {_PHY}, Required(PermissionKind.MICROPHONE),
        [FieldSpec("level_db", ValueKind.REAL)],
        "Ambient noise level; level only, no audio is recorded.",
    ),
    _src(
        "accelerometer", {_PHY}, NotRequired(),
        [
            FieldSpec("x", ValueKind.REAL),
            FieldSpec("y", ValueKind.REAL),
            FieldSpec("z", ValueKind.REAL),
        ],
        "Raw acceleration samples.",
    ),
    _src(
        "activity", {_PHY}, NotRequired(),
        [
            FieldSpec("kind", ValueKind.TEXT),
            FieldSpec("confidence", ValueKind.REAL),
        ],
        "Recognized physical activity (still, walking, ...).",
    ),
    _src(
        "steps", {_PHY}, NotRequired(),
        [FieldSpec("count", ValueKind.INTEGER)],
        "Step counter deltas.",
    ),
    _src(
        "phone_unlock", {_DEV}, NotRequired(),
        [FieldSpec("locked", ValueKind.BOOLEAN)],
        "Lock/unlock transitions of the device.",
    ),
    _src(
        "headphone_unplug", {_DEV}, NotRequired(),
        [FieldSpec("connected", ValueKind.BOOLEAN)],
        "Headphone plug/unplug transitions.",
    ),
    _src(
        "battery_charging", {_DEV}, NotRequired(),
        [
            FieldSpec("level_pct", ValueKind.INTEGER),
            FieldSpec("charging", ValueKind.BOOLEAN),
        ],
        "Battery level and charging state.",
    ),
    _src(
        "wifi", {_DEV}, NotRequired(),
        [
            FieldSpec("ssid", ValueKind.TEXT, _PSEUDO),
            FieldSpec("bssid", ValueKind.TEXT, _PSEUDO),
            FieldSpec("connected", ValueKind.BOOLEAN),
        ],
        "Wifi connectivity; network identifiers are pseudonymized on device.",
    ),
    _src(
        "bluetooth", {_DEV}, NotRequired(),
        [
            FieldSpec("peer_mac", ValueKind.TEXT, _PSEUDO),
            FieldSpec("event", ValueKind.TEXT),
        ],
        "Bluetooth peer sightings; peer addresses are pseudonymized on device.",
    ),
    _src(
        "calls_metadata", {_CORE}, Required(PermissionKind.CALLS),
        [
            FieldSpec("peer_number", ValueKind.TEXT, _PSEUDO),
            FieldSpec("direction", ValueKind.TEXT),
            FieldSpec("duration_s", ValueKind.INTEGER),
        ],
        "Call metadata only; the peer number is pseudonymized on device.",
    ),
    _src(
        "music_metadata", {_CORE},
        Conditional("app_usage", "player apps broadcast track metadata; some players require enabling the broadcast manually, modeled here via the app-usage grant"),
        [
            FieldSpec("title", ValueKind.TEXT),
            FieldSpec("artist", ValueKind.TEXT),
            FieldSpec("player_package", ValueKind.TEXT),
        ],
        "Metadata of music played back by the user.",
    ),
    _src(
        "photos_metadata", {_CORE}, Required(PermissionKind.PHOTOS),
        [
            FieldSpec("width", ValueKind.INTEGER),
            FieldSpec("height", ValueKind.INTEGER),
            FieldSpec("flash", ValueKind.BOOLEAN),
            FieldSpec("taken_at", ValueKind.TIMESTAMP),
        ],
        "Metadata of photos taken; no image content.",
    ),
    _src(
        "notifications_metadata", {_CORE, _APPS}, Required(PermissionKind.NOTIFICATIONS),
        [
            FieldSpec("app_package", ValueKind.TEXT),
            FieldSpec("content", ValueKind.TEXT, _DROP),
            FieldSpec("posted", ValueKind.BOOLEAN),
        ],
        "Notification metadata; the posting app is kept, the content is dropped on device.",
    ),
    _src(
        "app_usage", {_APPS}, Required(PermissionKind.APP_USAGE),
        [
            FieldSpec("app_package", ValueKind.TEXT),
            FieldSpec("foreground_ms", ValueKind.INTEGER),
        ],
        "Per-app foreground usage.",
    ),
    _src(
        "app_traffic", {_APPS}, Required(PermissionKind.APP_USAGE),
        [
            FieldSpec("app_package", ValueKind.TEXT),
            FieldSpec("rx_bytes", ValueKind.INTEGER),
            FieldSpec("tx_bytes", ValueKind.INTEGER),
        ],
        "Per-app network traffic counters.",
    ),
)

_BY_ID: dict[str, DataSourceDescriptor] = {d.source_id: d for d in _CATALOG}

SOURCE_IDS: tuple[str, ...] = tuple(d.source_id for d in _CATALOG)


def source_catalog() -> list[DataSourceDescriptor]:
    """All catalog rows in fixed order. The content never changes at runtime."""
    return list(_CATALOG)


def descriptor(source_id: str) -> DataSourceDescriptor:
    try:
        return _BY_ID[source_id]
    except KeyError:
        raise UnknownSourceError(source_id) from None


def categories_of(source_id: str) -> frozenset[Category]:
    return descriptor(source_id).categories


def permission_requirement(source_id: str) -> PermissionRequirement:
    return descriptor(source_id).permission


def catalog_manifest() -> str:
    """Machine-readable catalog export: one JSON record per line.

    Record keys, in order: source_id, categories, permission, fields.
    Consumed by the audit tooling and useful as a stable diff surface.
    """
    lines = []
    for d in _CATALOG:
        record = {
            "source_id": d.source_id,
            "categories": sorted(c.value for c in d.categories),
            "permission": d.permission.to_record(),
            "fields": [
                {"name": f.name, "kind": f.kind.value, "sensitivity": f.sensitivity.value}
                for f in d.payload_schema
            ],
        }
        lines.append(json.dumps(record, separators=(",", ":")))
    return "\n".join(lines) + "\n"


# --- events and validation -------------------------------------------


@dataclass(frozen=True)
class ContextEvent:
    """Envelope for one observation.

    ``payload`` holds field values keyed per the source schema; insertion
    order is preserved through serialization. ``anonymized`` is only set
    by the anonymizer; raw observations carry ``False``.
    """

    device_pseudonym: str
    source_id: str
    timestamp_ms: int
    payload: dict[str, object] = field(default_factory=dict)
    anonymized: bool = False
    schema_version: int = SCHEMA_VERSION


@dataclass(frozen=True)
class Violation:
    field: str
    reason: str

    def __str__(self) -> str:
        return f"{self.field}: {self.reason}" if self.field else self.reason


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def _kind_matches(kind: ValueKind, value: object) -> bool:
    if isinstance(value, bool):
        return kind is ValueKind.BOOLEAN
    if kind is ValueKind.INTEGER:
        return isinstance(value, int)
    if kind is ValueKind.REAL:
        return isinstance(value, (int, float))
    if kind is ValueKind.TEXT:
        return isinstance(value, str)
    if kind is ValueKind.TIMESTAMP:
        return isinstance(value, int) and 0 <= value <= MAX_TIMESTAMP_MS
    return False


def validate_event(event: ContextEvent) -> ValidationResult:
    """Check an event against the catalog. Pure; violations are values, not faults."""
    violations: list[Violation] = []

    source = _BY_ID.get(event.source_id)
    if source is None:
        violations.append(Violation("source_id", f"unknown source {event.source_id!r}"))

    if event.schema_version != SCHEMA_VERSION:
        violations.append(
            Violation("schema_version", f"unsupported version {event.schema_version!r}")
        )

    ts = event.timestamp_ms
    if not isinstance(ts, int) or isinstance(ts, bool) or not 0 <= ts <= MAX_TIMESTAMP_MS:
        violations.append(Violation("timestamp", f"not a valid instant: {ts!r}"))

    if source is not None:
        for name, value in event.payload.items():
            spec = source.schema_field(name)
            if spec is None:
                violations.append(Violation(name, "field not in source schema"))
            elif not _kind_matches(spec.kind, value):
                violations.append(
                    Violation(name, f"expected {spec.kind.value}, got {type(value).__name__}")
                )

    return ValidationResult(tuple(violations))
