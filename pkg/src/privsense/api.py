"""Wire protocol: HTTP semantics over whatever channel carries them.

JSON bodies, UTF-8, RFC 3339 timestamps. The same routers serve the
in-process channel used by tests and simulations and the real loopback
HTTP servers, so both modes exercise identical parsing and error paths.

Backend endpoints:
    POST   /v1/register                      {device_pseudonym}
    POST   /v1/batches                       {batch_id, device_pseudonym, events[]}
    GET    /v1/devices/{pseudonym}/data
    DELETE /v1/devices/{pseudonym}
    GET    /v1/export                        manifest (line-delimited)
Enrollment endpoints:
    POST   /v1/enroll                        {contact, enrollment_token, attested_days}
    GET    /v1/raffle?seed=S&n=N             operator-only, flag-gated
    GET    /v1/export                        manifest (line-delimited)
Both:
    GET    /v1/identity                      {fingerprint, transport}
"""

from __future__ import annotations

import json
import re
from typing import Callable
from urllib.parse import parse_qs, urlparse

from .backend import BackendService
from .enrollment import EnrollmentService
from .errors import (
    EmptyContactError,
    RawDataRejectedError,
    UnknownDeviceError,
)
from .records import event_to_record
from .transport import UploadBatch

Handler = Callable[[str, str, bytes | None], tuple[int, bytes]]

_DEVICE_DATA_RE = re.compile(r"^/v1/devices/([^/]+)/data$")
_DEVICE_RE = re.compile(r"^/v1/devices/([^/]+)$")


def _json_response(status: int, payload: dict | list) -> tuple[int, bytes]:
    return status, json.dumps(payload, separators=(",", ":")).encode("utf-8")


def _parse_body(body: bytes | None) -> dict:
    if not body:
        raise ValueError("empty request body")
    parsed = json.loads(body.decode("utf-8"))
    if not isinstance(parsed, dict):
        raise ValueError("request body must be a JSON object")
    return parsed


class BackendApi:
    """Routes backend requests into a BackendService."""

    def __init__(self, service: BackendService, identity: dict | None = None):
        self.service = service
        self.identity = identity or {"fingerprint": "in-process", "transport": "in-process"}

    def handle(self, method: str, path: str, body: bytes | None) -> tuple[int, bytes]:
        try:
            return self._route(method, path, body)
        except UnknownDeviceError as exc:
            return _json_response(404, {"error": "unknown_device", "detail": str(exc)})
        except RawDataRejectedError as exc:
            return _json_response(409, {"error": "raw_data_rejected", "detail": str(exc)})
        except (ValueError, KeyError) as exc:
            return _json_response(400, {"error": "bad_request", "detail": str(exc)})

    def _route(self, method: str, path: str, body: bytes | None) -> tuple[int, bytes]:
        url = urlparse(path)
        clean = url.path

        if method == "GET" and clean == "/v1/identity":
            return _json_response(200, self.identity)

        if method == "POST" and clean == "/v1/register":
            payload = _parse_body(body)
            ack = self.service.handle_register(payload["device_pseudonym"])
            return _json_response(200, ack)

        if method == "POST" and clean == "/v1/batches":
            batch = UploadBatch.from_wire(body or b"")
            ack = self.service.handle_batch(batch)
            return _json_response(200, ack)

        match = _DEVICE_DATA_RE.match(clean)
        if method == "GET" and match:
            events = self.service.handle_get_data(match.group(1))
            return _json_response(200, {
                "device_pseudonym": match.group(1),
                "events": [event_to_record(e) for e in events],
            })

        match = _DEVICE_RE.match(clean)
        if method == "DELETE" and match:
            ack = self.service.handle_delete(match.group(1))
            return _json_response(200, ack)

        if method == "GET" and clean == "/v1/export":
            return 200, self.service.export_manifest()

        return _json_response(404, {"error": "not_found", "detail": f"{method} {clean}"})


class EnrollmentApi:
    """Routes enrollment requests into an EnrollmentService."""

    def __init__(self, service: EnrollmentService, identity: dict | None = None,
                 allow_raffle: bool = False):
        self.service = service
        self.identity = identity or {"fingerprint": "in-process", "transport": "in-process"}
        self.allow_raffle = allow_raffle

    def handle(self, method: str, path: str, body: bytes | None) -> tuple[int, bytes]:
        try:
            return self._route(method, path, body)
        except EmptyContactError as exc:
            return _json_response(400, {"error": "empty_contact", "detail": str(exc)})
        except (ValueError, KeyError) as exc:
            return _json_response(400, {"error": "bad_request", "detail": str(exc)})

    def _route(self, method: str, path: str, body: bytes | None) -> tuple[int, bytes]:
        url = urlparse(path)
        clean = url.path

        if method == "GET" and clean == "/v1/identity":
            return _json_response(200, self.identity)

        if method == "POST" and clean == "/v1/enroll":
            payload = _parse_body(body)
            result = self.service.enroll(
                contact=payload["contact"],
                enrollment_token=payload["enrollment_token"],
                attested_days=int(payload["attested_days"]),
            )
            return _json_response(200, {"accepted": result.accepted, "reason": result.reason})

        if method == "GET" and clean == "/v1/raffle":
            if not self.allow_raffle:
                return _json_response(403, {"error": "raffle_disabled"})
            query = parse_qs(url.query)
            seed = int(query.get("seed", ["0"])[0])
            n = int(query.get("n", ["1"])[0])
            winners = self.service.draw_raffle(seed, n)
            return _json_response(200, {
                "winners": [
                    {
                        "contact": w.contact,
                        "enrollment_token": w.enrollment_token,
                        "attested_days": w.attested_days,
                    }
                    for w in winners
                ],
            })

        if method == "GET" and clean == "/v1/export":
            return 200, self.service.export_manifest()

        return _json_response(404, {"error": "not_found", "detail": f"{method} {clean}"})
