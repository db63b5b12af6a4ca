"""Line-delimited event records.

One JSON object per line, UTF-8, keys in fixed order: device_pseudonym,
source_id, timestamp, anonymized, schema_version, payload. The same
format serves the agent's local store, the simulator's stream files, the
wire batches, and the backend's per-device logs, so any of them can be
replayed through any other component.
"""

from __future__ import annotations

from typing import Iterable, Iterator

import json

from .catalog import ContextEvent
from .runtime import from_rfc3339, to_rfc3339

RECORD_KEYS = ("device_pseudonym", "source_id", "timestamp", "anonymized", "schema_version", "payload")


def event_to_record(event: ContextEvent) -> dict:
    return {
        "device_pseudonym": event.device_pseudonym,
        "source_id": event.source_id,
        "timestamp": to_rfc3339(event.timestamp_ms),
        "anonymized": event.anonymized,
        "schema_version": event.schema_version,
        "payload": dict(event.payload),
    }


def event_from_record(record: dict) -> ContextEvent:
    return ContextEvent(
        device_pseudonym=record["device_pseudonym"],
        source_id=record["source_id"],
        timestamp_ms=from_rfc3339(record["timestamp"]),
        payload=dict(record["payload"]),
        anonymized=bool(record["anonymized"]),
        schema_version=int(record["schema_version"]),
    )


def event_line(event: ContextEvent) -> str:
    return json.dumps(event_to_record(event), separators=(",", ":"))


def parse_event_lines(text: str) -> Iterator[ContextEvent]:
    for line in text.splitlines():
        line = line.strip()
        if line:
            yield event_from_record(json.loads(line))


def dump_events(events: Iterable[ContextEvent]) -> str:
    lines = [event_line(e) for e in events]
    return "\n".join(lines) + "\n" if lines else ""


def event_key(event: ContextEvent) -> tuple:
    """Canonical comparison key; used for multiset equality between stores."""
    return (
        event.device_pseudonym,
        event.source_id,
        event.timestamp_ms,
        tuple(sorted((k, repr(v)) for k, v in event.payload.items())),
        event.anonymized,
        event.schema_version,
    )
