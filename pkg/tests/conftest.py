from __future__ import annotations

import pytest

from privsense.agent import AgentConfig, DeviceAgent
from privsense.api import BackendApi
from privsense.backend import BackendService
from privsense.runtime import SeededRandomness, VirtualClock, from_rfc3339
from privsense.transport import (
    ChannelConfig,
    ChannelSecurity,
    InProcessChannel,
    Uploader,
)

START_MS = from_rfc3339("2026-01-05T00:00:00.000Z")

AGENT_CONFIG = AgentConfig(
    backend_url="https://127.0.0.1:0/",
    required_pdd_days=7,
    timezone="+01:00",
    ethics_approval_ref="IRB-2026-0117",
    policy_version="policy-1",
)


@pytest.fixture
def clock() -> VirtualClock:
    return VirtualClock(START_MS)


@pytest.fixture
def agent(clock, tmp_path) -> DeviceAgent:
    return DeviceAgent(
        AGENT_CONFIG, clock, SeededRandomness(7), store_path=tmp_path / "store.ndjson"
    )


@pytest.fixture
def backend(clock, tmp_path) -> BackendService:
    return BackendService(tmp_path / "backend", clock)


FINGERPRINT = "test-backend-credential"


def secure_channel(backend: BackendService) -> InProcessChannel:
    api = BackendApi(backend, {"fingerprint": FINGERPRINT, "transport": "in-process"})
    return InProcessChannel(api.handle, ChannelSecurity(True, FINGERPRINT))


def make_uploader(agent, backend, clock, channel=None) -> Uploader:
    return Uploader(
        agent,
        channel if channel is not None else secure_channel(backend),
        ChannelConfig(endpoint="backend", server_fingerprint=FINGERPRINT),
        clock,
        SeededRandomness("uploader-tests"),
    )
