"""Registration and periodic upload over a secured channel.

The uploader refuses to hand a single payload byte to a channel that is
not encrypted and pinned to the expected server credential. Delivery is
at-least-once with server-side deduplication by batch id, which yields an
exactly-once effect; the client tracks a high-water mark of acknowledged
events and keeps at most one batch in flight, so a retried batch reuses
its batch id.

Uploads run on a 24-hour cycle; the first upload is due immediately.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Protocol

from .agent import DeviceAgent
from .catalog import ContextEvent
from .errors import (
    ChannelInsecureError,
    NetworkFailureError,
    NoConsentError,
    NotRegisteredError,
    RawDataRejectedError,
    UnknownDeviceError,
)
from .records import event_from_record, event_to_record
from .runtime import MS_PER_HOUR, Clock, Randomness

UPLOAD_INTERVAL_MS = 24 * MS_PER_HOUR
RETRY_BASE_MS = 1_000
RETRY_FACTOR = 2
RETRY_MAX_TRIES = 5


class ProtocolError(NetworkFailureError):
    """Unexpected response shape or status; treated as retryable."""


@dataclass(frozen=True)
class ChannelConfig:
    endpoint: str
    server_fingerprint: str
    timeout_s: float = 10.0


@dataclass(frozen=True)
class ChannelSecurity:
    encrypted: bool
    server_fingerprint: str


@dataclass(frozen=True)
class UploadBatch:
    batch_id: str
    device_pseudonym: str
    events: tuple[ContextEvent, ...]
    created_at_ms: int

    def to_wire(self) -> bytes:
        body = {
            "batch_id": self.batch_id,
            "device_pseudonym": self.device_pseudonym,
            "events": [event_to_record(e) for e in self.events],
        }
        return json.dumps(body, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_wire(cls, body: bytes, created_at_ms: int = 0) -> "UploadBatch":
        record = json.loads(body.decode("utf-8"))
        if not isinstance(record, dict) or not isinstance(record.get("events"), list):
            raise ValueError("batch body must be an object with an events array")
        return cls(
            batch_id=record["batch_id"],
            device_pseudonym=record["device_pseudonym"],
            events=tuple(event_from_record(r) for r in record["events"]),
            created_at_ms=created_at_ms,
        )


class Channel(Protocol):
    """Bytes-level request transport with declared security properties."""

    @property
    def security(self) -> ChannelSecurity: ...

    def request(self, method: str, path: str, body: bytes | None) -> tuple[int, bytes]: ...


Handler = Callable[[str, str, bytes | None], tuple[int, bytes]]


class InProcessChannel:
    """Dispatches requests straight into a service router."""

    def __init__(self, handler: Handler, security: ChannelSecurity):
        self._handler = handler
        self.security = security

    def request(self, method: str, path: str, body: bytes | None) -> tuple[int, bytes]:
        return self._handler(method, path, body)


class RecordingChannel:
    """Wraps a channel and keeps every byte that crossed it, both ways."""

    def __init__(self, inner: Channel):
        self._inner = inner
        self.request_bytes: list[bytes] = []
        self.response_bytes: list[bytes] = []
        self.request_count = 0

    @property
    def security(self) -> ChannelSecurity:
        return self._inner.security

    def request(self, method: str, path: str, body: bytes | None) -> tuple[int, bytes]:
        self.request_count += 1
        self.request_bytes.append(f"{method} {path}".encode() + b"\n" + (body or b""))
        status, response = self._inner.request(method, path, body)
        self.response_bytes.append(response)
        return status, response

    def all_bytes(self) -> bytes:
        return b"\n".join(self.request_bytes + self.response_bytes)


class FaultAction(Enum):
    DELIVER = "deliver"
    DROP_REQUEST = "drop_request"
    DROP_RESPONSE = "drop_response"
    DELIVER_TWICE = "deliver_twice"
    REPLAY_PREVIOUS = "replay_previous"


class FaultInjectingChannel:
    """Injects drops, duplicate deliveries, and stale replays.

    ``plan`` yields one FaultAction per request. Drop faults surface as
    NetworkFailureError on the client; duplication faults deliver the
    request more than once; replay re-delivers the previous request
    before the current one (an out-of-order frame).
    """

    def __init__(self, inner: Channel, plan: Callable[[str, str, bytes | None], FaultAction]):
        self._inner = inner
        self._plan = plan
        self._previous: tuple[str, str, bytes | None] | None = None
        self.injected: list[FaultAction] = []

    @property
    def security(self) -> ChannelSecurity:
        return self._inner.security

    def request(self, method: str, path: str, body: bytes | None) -> tuple[int, bytes]:
        action = self._plan(method, path, body)
        self.injected.append(action)
        if action is FaultAction.DROP_REQUEST:
            raise NetworkFailureError("request lost before reaching the server")
        if action is FaultAction.REPLAY_PREVIOUS and self._previous is not None:
            self._inner.request(*self._previous)
        self._previous = (method, path, body)
        status, response = self._inner.request(method, path, body)
        if action is FaultAction.DELIVER_TWICE:
            status, response = self._inner.request(method, path, body)
        if action is FaultAction.DROP_RESPONSE:
            raise NetworkFailureError("response lost on the way back")
        return status, response


def upload_due(now_ms: int, last_upload_at_ms: int | None) -> bool:
    """True when no upload happened yet or the 24 h interval elapsed."""
    if last_upload_at_ms is None:
        return True
    return now_ms - last_upload_at_ms >= UPLOAD_INTERVAL_MS


class CycleOutcome(Enum):
    UPLOADED = "uploaded"
    DEFERRED = "deferred"
    NOT_DUE = "not_due"
    NOTHING_PENDING = "nothing_pending"


@dataclass(frozen=True)
class CycleResult:
    outcome: CycleOutcome
    batch_id: str | None = None
    event_count: int = 0
    attempts: int = 0


class Uploader:
    """Client side of the upload protocol for one device."""

    def __init__(
        self,
        agent: DeviceAgent,
        channel: Channel,
        channel_config: ChannelConfig,
        clock: Clock,
        randomness: Randomness,
    ):
        self.agent = agent
        self.channel = channel
        self.channel_config = channel_config
        self.clock = clock
        self.randomness = randomness
        self.registered = False
        self.high_water_mark = 0
        self.inflight: UploadBatch | None = None
        self.successful_uploads: list[int] = []  # ack instants, for schedule audits

    # -- security gate ---------------------------------------------------

    def _require_secure(self) -> None:
        security = self.channel.security
        if not security.encrypted:
            raise ChannelInsecureError("channel is not encrypted")
        if security.server_fingerprint != self.channel_config.server_fingerprint:
            raise ChannelInsecureError(
                "server credential fingerprint does not match the pinned value"
            )

    def _request_json(self, method: str, path: str, payload: bytes | None) -> tuple[int, dict]:
        self._require_secure()
        status, body = self.channel.request(method, path, payload)
        try:
            parsed = json.loads(body.decode("utf-8")) if body else {}
        except ValueError as exc:
            raise NetworkFailureError(f"undecodable response: {exc}") from exc
        return status, parsed

    def _with_retries(self, attempt: Callable[[], dict]) -> tuple[dict | None, int]:
        """Bounded exponential backoff: base 1 s, factor 2, 5 tries per cycle."""
        delay_ms = RETRY_BASE_MS
        for attempt_no in range(1, RETRY_MAX_TRIES + 1):
            try:
                return attempt(), attempt_no
            except NetworkFailureError:
                if attempt_no == RETRY_MAX_TRIES:
                    return None, attempt_no
                self.clock.sleep_ms(delay_ms)
                delay_ms *= RETRY_FACTOR
        raise AssertionError("unreachable")

    # -- protocol --------------------------------------------------------

    def register(self) -> dict:
        """Announce the device pseudonym to the backend. Idempotent."""
        self._require_secure()  # before anything else, even the consent check
        if self.agent.consent is None:
            raise NoConsentError("registration happens only after consent")
        payload = json.dumps(
            {"device_pseudonym": self.agent.device_pseudonym}, separators=(",", ":")
        ).encode("utf-8")

        def attempt() -> dict:
            status, body = self._request_json("POST", "/v1/register", payload)
            if status >= 500:
                raise NetworkFailureError(f"server error {status}")
            if status != 200:
                raise ProtocolError(f"register failed with status {status}: {body}")
            return body

        ack, _ = self._with_retries(attempt)
        if ack is None:
            raise NetworkFailureError("registration deferred after repeated failures")
        self.registered = True
        return ack

    def build_batch(self) -> UploadBatch | None:
        """Snapshot events beyond the high-water mark into a batch.

        At most one batch is in flight: until it is acknowledged, the same
        batch (same id) is returned again, which is what makes retries
        deduplicable on the server.
        """
        if not self.registered:
            raise NotRegisteredError("build_batch before registration")
        if self.inflight is not None:
            return self.inflight
        pending = self.agent.events[self.high_water_mark:]
        if not pending:
            return None
        self.inflight = UploadBatch(
            batch_id=self.randomness.token_hex(16, stream="batch-id"),
            device_pseudonym=self.agent.device_pseudonym,
            events=tuple(pending),
            created_at_ms=self.clock.now_ms(),
        )
        return self.inflight

    def _send_batch(self, batch: UploadBatch) -> dict:
        status, body = self._request_json("POST", "/v1/batches", batch.to_wire())
        if status >= 500:
            raise NetworkFailureError(f"server error {status}")
        if status == 404:
            raise UnknownDeviceError(batch.device_pseudonym)
        if status == 409:
            raise RawDataRejectedError(str(body))
        if status != 200:
            raise ProtocolError(f"upload failed with status {status}: {body}")
        return body

    def upload(self, batch: UploadBatch) -> CycleResult:
        """Deliver one batch with the retry contract applied."""
        ack, attempts = self._with_retries(lambda: self._send_batch(batch))
        if ack is None:
            # state unchanged; the same batch id goes out next cycle
            return CycleResult(CycleOutcome.DEFERRED, batch.batch_id, len(batch.events), attempts)
        self.high_water_mark += len(batch.events)
        self.inflight = None
        now = self.clock.now_ms()
        self.agent.last_upload_at_ms = now
        self.successful_uploads.append(now)
        return CycleResult(CycleOutcome.UPLOADED, batch.batch_id, len(batch.events), attempts)

    def upload_cycle(self) -> CycleResult:
        """Run one scheduled cycle: check due, build, deliver."""
        if not upload_due(self.clock.now_ms(), self.agent.last_upload_at_ms):
            return CycleResult(CycleOutcome.NOT_DUE)
        batch = self.build_batch()
        if batch is None:
            return CycleResult(CycleOutcome.NOTHING_PENDING)
        return self.upload(batch)
