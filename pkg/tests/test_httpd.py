from __future__ import annotations

import json

import pytest

from conftest import START_MS, make_uploader
from privsense.api import BackendApi
from privsense.backend import BackendService
from privsense.catalog import ContextEvent
from privsense.errors import ChannelInsecureError
from privsense.httpd import HttpsPinnedChannel, PlaintextChannel, generate_self_signed, serve
from privsense.runtime import SeededRandomness, VirtualClock
from privsense.transport import ChannelConfig, Uploader


@pytest.fixture(scope="module")
def tls_server(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("tls-server")
    cert, key, fingerprint = generate_self_signed(tmp / "tls")
    backend = BackendService(tmp / "data", VirtualClock(START_MS))
    api = BackendApi(backend, {"fingerprint": fingerprint, "transport": "tls"})
    server, _thread, port = serve(api.handle, 0, (cert, key))
    yield backend, port, fingerprint
    server.shutdown()


def test_pinned_channel_round_trip(tls_server):
    backend, port, fingerprint = tls_server
    channel = HttpsPinnedChannel("127.0.0.1", port, fingerprint)
    assert channel.security.encrypted
    assert channel.security.server_fingerprint == fingerprint

    status, body = channel.request(
        "POST", "/v1/register", json.dumps({"device_pseudonym": "ab" * 16}).encode()
    )
    assert status == 200
    assert json.loads(body)["registered"] is True
    assert "ab" * 16 in backend.known_devices()

    status, body = channel.request("GET", "/v1/identity", None)
    assert status == 200
    assert json.loads(body)["fingerprint"] == fingerprint


def test_wrong_pin_refused_before_sending(tls_server):
    _backend, port, _fingerprint = tls_server
    channel = HttpsPinnedChannel("127.0.0.1", port, "0" * 64)
    with pytest.raises(ChannelInsecureError):
        channel.request("POST", "/v1/register", b"{}")


def test_uploader_refuses_plaintext_channel(tls_server, agent, clock):
    _backend, port, fingerprint = tls_server
    agent.record_consent()
    plain = PlaintextChannel("127.0.0.1", port, fingerprint)
    uploader = Uploader(
        agent, plain, ChannelConfig(endpoint="x", server_fingerprint=fingerprint),
        clock, SeededRandomness("plain"),
    )
    with pytest.raises(ChannelInsecureError):
        uploader.register()


def test_uploader_end_to_end_over_tls(tls_server, agent, backend, clock):
    served_backend, port, fingerprint = tls_server
    agent.record_consent()
    channel = HttpsPinnedChannel("127.0.0.1", port, fingerprint)
    uploader = make_uploader(agent, backend, clock, channel=channel)
    # pinned fingerprint in the channel config must match the observed one
    uploader.channel_config = ChannelConfig(endpoint="x", server_fingerprint=fingerprint)
    uploader.register()
    agent.ingest(ContextEvent("", "steps", START_MS, {"count": 5}))
    result = uploader.upload_cycle()
    assert result.outcome.value == "uploaded"
    assert len(served_backend.handle_get_data(agent.device_pseudonym)) == 1
