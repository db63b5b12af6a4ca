"""Loopback HTTP servers and the pinned-TLS client channel.

The serve commands host the backend and enrollment APIs over TLS with a
self-signed certificate generated at startup; the client channel pins
the server by the SHA-256 fingerprint of its certificate and verifies it
on every connection. A plaintext channel exists only so callers can
demonstrate that the uploader refuses it.
"""

from __future__ import annotations

import hashlib
import http.client
import socket
import ssl
import subprocess
import sys
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable

from .errors import ChannelInsecureError, NetworkFailureError
from .transport import ChannelSecurity

Handler = Callable[[str, str, bytes | None], tuple[int, bytes]]


def generate_self_signed(tls_dir: str | Path) -> tuple[Path, Path, str]:
    """Create a throwaway cert/key pair; returns (cert, key, sha256 fingerprint)."""
    tls_dir = Path(tls_dir)
    tls_dir.mkdir(parents=True, exist_ok=True)
    cert_path = tls_dir / "cert.pem"
    key_path = tls_dir / "key.pem"
    if not cert_path.exists():
        subprocess.run(
            [
                "openssl", "req", "-x509", "-newkey", "rsa:2048",
                "-keyout", str(key_path), "-out", str(cert_path),
                "-days", "7", "-nodes", "-subj", "/CN=127.0.0.1",
            ],
            check=True,
            capture_output=True,
        )
    return cert_path, key_path, cert_fingerprint(cert_path)


def cert_fingerprint(cert_path: str | Path) -> str:
    pem = Path(cert_path).read_text(encoding="ascii")
    der = ssl.PEM_cert_to_DER_cert(pem)
    return hashlib.sha256(der).hexdigest()


class _ApiRequestHandler(BaseHTTPRequestHandler):
    api_handle: Handler = None  # type: ignore[assignment]
    protocol_version = "HTTP/1.1"

    def log_message(self, format: str, *args) -> None:  # noqa: A002 - stdlib signature
        pass

    def _dispatch(self) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else None
        path = self.path
        status, payload = type(self).api_handle(self.command, path, body)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    do_GET = _dispatch
    do_POST = _dispatch
    do_DELETE = _dispatch


def serve(
    api_handle: Handler,
    port: int = 0,
    tls: tuple[str | Path, str | Path] | None = None,
) -> tuple[ThreadingHTTPServer, threading.Thread, int]:
    """Start a server thread; returns (server, thread, bound port)."""
    handler = type("BoundHandler", (_ApiRequestHandler,), {"api_handle": staticmethod(api_handle)})
    server = ThreadingHTTPServer(("127.0.0.1", port), handler)
    if tls is not None:
        cert_path, key_path = tls
        context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        context.load_cert_chain(str(cert_path), str(key_path))
        server.socket = context.wrap_socket(server.socket, server_side=True)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread, server.server_address[1]


class HttpsPinnedChannel:
    """TLS client channel that trusts exactly one certificate.

    Certificate chains are not validated (the cert is self-signed); the
    server is authenticated by comparing the presented certificate's
    SHA-256 digest against the pinned value on every connection.
    """

    def __init__(self, host: str, port: int, pinned_fingerprint: str, timeout_s: float = 10.0):
        self.host = host
        self.port = port
        self.pinned_fingerprint = pinned_fingerprint
        self.timeout_s = timeout_s
        self._context = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
        self._context.check_hostname = False
        self._context.verify_mode = ssl.CERT_NONE
        self._observed: str | None = None

    def _observe_fingerprint(self) -> str:
        if self._observed is None:
            with socket.create_connection((self.host, self.port), self.timeout_s) as raw:
                with self._context.wrap_socket(raw, server_hostname=self.host) as tls_sock:
                    der = tls_sock.getpeercert(binary_form=True)
            self._observed = hashlib.sha256(der or b"").hexdigest()
        return self._observed

    @property
    def security(self) -> ChannelSecurity:
        try:
            fingerprint = self._observe_fingerprint()
        except OSError as exc:
            raise NetworkFailureError(f"cannot reach {self.host}:{self.port}: {exc}") from exc
        return ChannelSecurity(encrypted=True, server_fingerprint=fingerprint)

    def request(self, method: str, path: str, body: bytes | None) -> tuple[int, bytes]:
        conn = http.client.HTTPSConnection(
            self.host, self.port, timeout=self.timeout_s, context=self._context
        )
        try:
            conn.connect()
            der = conn.sock.getpeercert(binary_form=True)  # type: ignore[union-attr]
            presented = hashlib.sha256(der or b"").hexdigest()
            if presented != self.pinned_fingerprint:
                raise ChannelInsecureError(
                    "server certificate does not match the pinned fingerprint"
                )
            headers = {"Content-Type": "application/json"} if body else {}
            conn.request(method, path, body=body, headers=headers)
            response = conn.getresponse()
            return response.status, response.read()
        except (OSError, http.client.HTTPException) as exc:
            raise NetworkFailureError(f"{method} {path}: {exc}") from exc
        finally:
            conn.close()


class PlaintextChannel:
    """Unencrypted HTTP channel. The uploader must refuse it."""

    def __init__(self, host: str, port: int, claimed_fingerprint: str = "", timeout_s: float = 10.0):
        self.host = host
        self.port = port
        self.timeout_s = timeout_s
        self.security = ChannelSecurity(encrypted=False, server_fingerprint=claimed_fingerprint)

    def request(self, method: str, path: str, body: bytes | None) -> tuple[int, bytes]:
        conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout_s)
        try:
            headers = {"Content-Type": "application/json"} if body else {}
            conn.request(method, path, body=body, headers=headers)
            response = conn.getresponse()
            return response.status, response.read()
        except (OSError, http.client.HTTPException) as exc:
            raise NetworkFailureError(f"{method} {path}: {exc}") from exc
        finally:
            conn.close()


@dataclass
class ServerProcess:
    process: subprocess.Popen
    port: int
    fingerprint: str

    def stop(self) -> None:
        self.process.terminate()
        try:
            self.process.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self.process.kill()
            self.process.wait(timeout=10)


def spawn_server(
    kind: str,
    data_dir: str | Path,
    tls_dir: str | Path,
    extra_args: list[str] | None = None,
    startup_timeout_s: float = 30.0,
) -> ServerProcess:
    """Launch `privsense <kind> serve` as a child process on an ephemeral port.

    The child prints one ``LISTENING port=<p> fingerprint=<fp>`` line once
    it is ready; we block on that line.
    """
    if kind not in ("backend", "enroll"):
        raise ValueError(f"kind must be backend or enroll, got {kind!r}")
    command = [
        sys.executable, "-m", "privsense", kind, "serve",
        "--port", "0",
        "--data-dir", str(data_dir),
        "--tls-dir", str(tls_dir),
    ] + (extra_args or [])
    process = subprocess.Popen(
        command, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True
    )
    deadline = time.monotonic() + startup_timeout_s
    assert process.stdout is not None
    while True:
        if time.monotonic() > deadline:
            process.kill()
            raise NetworkFailureError(f"{kind} server did not start in {startup_timeout_s}s")
        line = process.stdout.readline()
        if not line:
            stderr = process.stderr.read() if process.stderr else ""
            raise NetworkFailureError(f"{kind} server exited during startup: {stderr[-2000:]}")
        if line.startswith("LISTENING "):
            fields = dict(
                part.split("=", 1) for part in line.strip().split()[1:] if "=" in part
            )
            return ServerProcess(
                process=process,
                port=int(fields["port"]),
                fingerprint=fields["fingerprint"],
            )
