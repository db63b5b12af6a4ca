"""Backend ingest service, keyed solely by random device pseudonyms.

The storage schema has no field that could hold a name, an email address,
or any other contact detail; compensation contact data lives in a
different service with no shared identifiers. Possession of the
pseudonym is the only credential, mirroring the login-free device design.

Persistence is an append-only log file per device plus a small metadata
file. Deletion removes the device's directory outright, which makes
erasure byte-verifiable: after a delete, a scan of the data directory
finds no trace of the device's events.
"""

from __future__ import annotations

import json
import re
import shutil
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import ContextEvent
from .errors import RawDataRejectedError, UnknownDeviceError
from .records import event_from_record, event_line
from .runtime import Clock, SystemClock, to_rfc3339
from .transport import UploadBatch

_PSEUDONYM_RE = re.compile(r"^[0-9a-f]{8,128}$")


@dataclass
class DeviceRecord:
    """Everything the backend knows about one device. No contact fields."""

    device_pseudonym: str
    registered_at_ms: int
    events: list[ContextEvent] = field(default_factory=list)
    seen_batch_ids: set[str] = field(default_factory=set)


class BackendService:
    """Thread-safe ingest store; per-device operations serialize on the record."""

    def __init__(self, data_dir: str | Path, clock: Clock | None = None):
        self.data_dir = Path(data_dir)
        self.devices_dir = self.data_dir / "devices"
        self.devices_dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock or SystemClock()
        self._devices: dict[str, DeviceRecord] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()
        self._recover()

    # -- persistence -----------------------------------------------------

    def _device_dir(self, pseudonym: str) -> Path:
        return self.devices_dir / pseudonym

    def _recover(self) -> None:
        for device_dir in sorted(self.devices_dir.iterdir()) if self.devices_dir.exists() else []:
            meta_path = device_dir / "meta.json"
            if not meta_path.is_file():
                continue
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            record = DeviceRecord(
                device_pseudonym=meta["device_pseudonym"],
                registered_at_ms=int(meta["registered_at_ms"]),
                seen_batch_ids=set(meta["seen_batch_ids"]),
            )
            log_path = device_dir / "events.log"
            if log_path.is_file():
                for line in log_path.read_text(encoding="utf-8").splitlines():
                    if line.strip():
                        record.events.append(event_from_record(json.loads(line)))
            self._devices[record.device_pseudonym] = record

    def _write_meta(self, record: DeviceRecord) -> None:
        meta = {
            "device_pseudonym": record.device_pseudonym,
            "registered_at_ms": record.registered_at_ms,
            "registered_at": to_rfc3339(record.registered_at_ms),
            "seen_batch_ids": sorted(record.seen_batch_ids),
        }
        path = self._device_dir(record.device_pseudonym) / "meta.json"
        path.write_text(json.dumps(meta, indent=1), encoding="utf-8")

    def _append_events(self, record: DeviceRecord, events: tuple[ContextEvent, ...]) -> None:
        log_path = self._device_dir(record.device_pseudonym) / "events.log"
        with log_path.open("a", encoding="utf-8") as fh:
            for event in events:
                fh.write(event_line(event) + "\n")

    def _lock_for(self, pseudonym: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(pseudonym, threading.Lock())

    @staticmethod
    def _check_pseudonym(pseudonym: str) -> str:
        if not _PSEUDONYM_RE.match(pseudonym or ""):
            raise ValueError(f"malformed device pseudonym: {pseudonym!r}")
        return pseudonym

    # -- request handlers --------------------------------------------------

    def handle_register(self, device_pseudonym: str) -> dict:
        """Create the device record if absent. Idempotent."""
        pseudonym = self._check_pseudonym(device_pseudonym)
        with self._lock_for(pseudonym):
            record = self._devices.get(pseudonym)
            if record is None:
                record = DeviceRecord(
                    device_pseudonym=pseudonym,
                    registered_at_ms=self.clock.now_ms(),
                )
                self._device_dir(pseudonym).mkdir(parents=True, exist_ok=True)
                self._write_meta(record)
                with self._registry_lock:
                    self._devices[pseudonym] = record
        return {"device_pseudonym": pseudonym, "registered": True}

    def handle_batch(self, batch: UploadBatch) -> dict:
        """Store a batch exactly once, keyed by its batch id.

        Any event arriving with anonymized=false is rejected outright and
        nothing from the batch is stored: the backend never holds raw data,
        even from a misbehaving client.
        """
        pseudonym = self._check_pseudonym(batch.device_pseudonym)
        with self._lock_for(pseudonym):
            record = self._devices.get(pseudonym)
            if record is None:
                raise UnknownDeviceError(pseudonym)
            if any(not event.anonymized for event in batch.events):
                raise RawDataRejectedError(
                    f"batch {batch.batch_id} contains non-anonymized events"
                )
            if batch.batch_id in record.seen_batch_ids:
                return {"batch_id": batch.batch_id, "duplicate": True}
            record.events.extend(batch.events)
            record.seen_batch_ids.add(batch.batch_id)
            self._append_events(record, batch.events)
            self._write_meta(record)
        return {"batch_id": batch.batch_id, "duplicate": False}

    def handle_get_data(self, device_pseudonym: str) -> list[ContextEvent]:
        """A device's own events, nothing else."""
        pseudonym = self._check_pseudonym(device_pseudonym)
        with self._lock_for(pseudonym):
            record = self._devices.get(pseudonym)
            if record is None:
                raise UnknownDeviceError(pseudonym)
            return list(record.events)

    def handle_delete(self, device_pseudonym: str) -> dict:
        """Remove the record and every persisted byte. Idempotent."""
        pseudonym = self._check_pseudonym(device_pseudonym)
        with self._lock_for(pseudonym):
            with self._registry_lock:
                self._devices.pop(pseudonym, None)
            device_dir = self._device_dir(pseudonym)
            if device_dir.exists():
                shutil.rmtree(device_dir)
        return {"device_pseudonym": pseudonym, "deleted": True}

    # -- export and audit surfaces ----------------------------------------

    def known_devices(self) -> list[str]:
        with self._registry_lock:
            return sorted(self._devices)

    def export_manifest(self) -> bytes:
        """Line-delimited export of identifier-level state.

        Identifier fields only (pseudonym, batch ids): the export exists
        for unlinkability auditing against the enrollment export, so it
        carries no value that could coincidentally equal one over there.
        """
        lines = []
        for pseudonym in self.known_devices():
            record = self._devices[pseudonym]
            lines.append(
                json.dumps(
                    {
                        "device_pseudonym": pseudonym,
                        "batch_ids": sorted(record.seen_batch_ids),
                    },
                    separators=(",", ":"),
                )
            )
        return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""

    def persistence_bytes(self) -> bytes:
        """Every byte currently persisted, for leakage and deletion audits."""
        chunks = []
        for path in sorted(self.data_dir.rglob("*")):
            if path.is_file():
                chunks.append(path.read_bytes())
        return b"\n".join(chunks)
