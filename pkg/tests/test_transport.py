from __future__ import annotations

import itertools

import pytest

from conftest import FINGERPRINT, START_MS, make_uploader, secure_channel
from privsense.catalog import ContextEvent
from privsense.errors import (
    ChannelInsecureError,
    NetworkFailureError,
    NoConsentError,
    NotRegisteredError,
)
from privsense.records import event_key
from privsense.runtime import MS_PER_HOUR, MS_PER_MINUTE
from privsense.transport import (
    ChannelSecurity,
    CycleOutcome,
    FaultAction,
    FaultInjectingChannel,
    InProcessChannel,
    RecordingChannel,
    upload_due,
)


def _steps(ts_ms, count):
    return ContextEvent(
        device_pseudonym="", source_id="steps", timestamp_ms=ts_ms, payload={"count": count}
    )


# -- upload_due ---------------------------------------------------------


def test_upload_due_at_exactly_24h():
    last = START_MS
    assert upload_due(last + 24 * MS_PER_HOUR, last)


def test_upload_not_due_one_minute_early():
    last = START_MS
    assert not upload_due(last + 24 * MS_PER_HOUR - MS_PER_MINUTE, last)


def test_upload_due_when_never_uploaded():
    assert upload_due(START_MS, None)


# -- register -------------------------------------------------------------


def test_register_requires_consent(agent, backend, clock):
    uploader = make_uploader(agent, backend, clock)
    with pytest.raises(NoConsentError):
        uploader.register()


def test_register_idempotent(agent, backend, clock):
    agent.record_consent()
    uploader = make_uploader(agent, backend, clock)
    first = uploader.register()
    second = uploader.register()
    assert first == second
    assert backend.known_devices() == [agent.device_pseudonym]


def test_register_refuses_unencrypted_channel(agent, backend, clock):
    agent.record_consent()
    from privsense.api import BackendApi

    api = BackendApi(backend)
    insecure = RecordingChannel(
        InProcessChannel(api.handle, ChannelSecurity(False, FINGERPRINT))
    )
    uploader = make_uploader(agent, backend, clock, channel=insecure)
    with pytest.raises(ChannelInsecureError):
        uploader.register()
    assert insecure.request_count == 0


def test_register_refuses_wrong_fingerprint(agent, backend, clock):
    agent.record_consent()
    from privsense.api import BackendApi

    api = BackendApi(backend)
    mitm = RecordingChannel(
        InProcessChannel(api.handle, ChannelSecurity(True, "someone-else"))
    )
    uploader = make_uploader(agent, backend, clock, channel=mitm)
    with pytest.raises(ChannelInsecureError):
        uploader.register()
    assert mitm.request_count == 0


# -- build_batch --------------------------------------------------------------


def test_build_batch_requires_registration(agent, backend, clock):
    uploader = make_uploader(agent, backend, clock)
    with pytest.raises(NotRegisteredError):
        uploader.build_batch()


def test_build_batch_orders_and_excludes_acked(agent, backend, clock):
    agent.record_consent()
    uploader = make_uploader(agent, backend, clock)
    uploader.register()

    for i in range(5):
        agent.ingest(_steps(START_MS + i * MS_PER_MINUTE, 10 + i))
    batch = uploader.build_batch()
    assert len(batch.events) == 5
    assert [e.payload["count"] for e in batch.events] == [10, 11, 12, 13, 14]

    uploader.upload(batch)
    assert uploader.build_batch() is None

    agent.ingest(_steps(START_MS + 9 * MS_PER_MINUTE, 99))
    next_batch = uploader.build_batch()

    # set-difference oracle: pending must be exactly stored minus acked
    stored = [event_key(e) for e in agent.events]
    acked = stored[: uploader.high_water_mark]
    expected_pending = [k for k in stored if k not in acked]
    assert [event_key(e) for e in next_batch.events] == expected_pending
    assert next_batch.batch_id != batch.batch_id


def test_build_batch_reuses_inflight_batch(agent, backend, clock):
    agent.record_consent()
    uploader = make_uploader(agent, backend, clock)
    uploader.register()
    agent.ingest(_steps(START_MS, 10))
    first = uploader.build_batch()
    second = uploader.build_batch()
    assert first.batch_id == second.batch_id


# -- retry contract --------------------------------------------------------------


class FlakyChannel:
    """Fails the first ``failures`` requests, then delegates."""

    def __init__(self, inner, failures: int):
        self._inner = inner
        self.remaining_failures = failures
        self.attempts = 0

    @property
    def security(self):
        return self._inner.security

    def request(self, method, path, body):
        self.attempts += 1
        if self.remaining_failures > 0:
            self.remaining_failures -= 1
            raise NetworkFailureError("injected")
        return self._inner.request(method, path, body)


def test_upload_retries_with_exponential_backoff(agent, backend, clock):
    agent.record_consent()
    flaky = FlakyChannel(secure_channel(backend), failures=3)
    uploader = make_uploader(agent, backend, clock, channel=flaky)
    uploader.register()  # consumes some failures? no: register has its own retries
    flaky.remaining_failures = 3
    agent.ingest(_steps(START_MS, 10))

    before = clock.now_ms()
    result = uploader.upload_cycle()
    assert result.outcome is CycleOutcome.UPLOADED
    assert result.attempts == 4
    # backoff slept 1s + 2s + 4s on the virtual clock
    assert clock.now_ms() - before == 7_000


def test_upload_defers_after_five_failures(agent, backend, clock):
    agent.record_consent()
    flaky = FlakyChannel(secure_channel(backend), failures=99)
    uploader = make_uploader(agent, backend, clock, channel=flaky)
    flaky.remaining_failures = 0
    uploader.register()
    flaky.remaining_failures = 99

    agent.ingest(_steps(START_MS, 10))
    hwm_before = uploader.high_water_mark
    result = uploader.upload_cycle()
    assert result.outcome is CycleOutcome.DEFERRED
    assert result.attempts == 5
    assert uploader.high_water_mark == hwm_before
    assert agent.last_upload_at_ms is None
    # the same batch id is retried next cycle
    assert uploader.inflight is not None
    deferred_id = uploader.inflight.batch_id
    flaky.remaining_failures = 0
    result = uploader.upload_cycle()
    assert result.outcome is CycleOutcome.UPLOADED
    assert result.batch_id == deferred_id


def test_successful_upload_sets_last_upload_at(agent, backend, clock):
    agent.record_consent()
    uploader = make_uploader(agent, backend, clock)
    uploader.register()
    agent.ingest(_steps(START_MS, 10))
    uploader.upload_cycle()
    assert agent.last_upload_at_ms == clock.now_ms()


def test_cycle_outcomes_when_not_due_or_empty(agent, backend, clock):
    agent.record_consent()
    uploader = make_uploader(agent, backend, clock)
    uploader.register()
    assert uploader.upload_cycle().outcome is CycleOutcome.NOTHING_PENDING
    agent.ingest(_steps(START_MS, 10))
    assert uploader.upload_cycle().outcome is CycleOutcome.UPLOADED
    agent.ingest(_steps(START_MS + 1, 11))
    assert uploader.upload_cycle().outcome is CycleOutcome.NOT_DUE


# -- exactly-once under injected faults -------------------------------------------


def _backend_keys(backend, pseudonym):
    return sorted(event_key(e) for e in backend.handle_get_data(pseudonym))


@pytest.mark.parametrize(
    "schedule",
    [
        [FaultAction.DROP_REQUEST, FaultAction.DELIVER],
        [FaultAction.DROP_RESPONSE, FaultAction.DELIVER],
        [FaultAction.DELIVER_TWICE],
        [FaultAction.REPLAY_PREVIOUS],
        [
            FaultAction.DROP_RESPONSE,
            FaultAction.DROP_REQUEST,
            FaultAction.DELIVER_TWICE,
        ],
    ],
)
def test_exactly_once_effect_under_faults(agent, backend, clock, schedule):
    agent.record_consent()
    actions = itertools.chain(schedule, itertools.repeat(FaultAction.DELIVER))

    def plan(method, path, body):
        return next(actions) if path == "/v1/batches" else FaultAction.DELIVER

    faulty = FaultInjectingChannel(secure_channel(backend), plan)
    uploader = make_uploader(agent, backend, clock, channel=faulty)
    uploader.register()

    for cycle in range(3):
        for i in range(4):
            agent.ingest(_steps(clock.now_ms() + i, cycle * 10 + i))
        result = uploader.upload_cycle()
        assert result.outcome is CycleOutcome.UPLOADED
        clock.advance_ms(24 * MS_PER_HOUR + MS_PER_MINUTE)

    assert _backend_keys(backend, agent.device_pseudonym) == sorted(
        event_key(e) for e in agent.events
    )


def test_drop_response_with_retry_stores_events_once(agent, backend, clock):
    agent.record_consent()
    actions = itertools.chain([FaultAction.DROP_RESPONSE], itertools.repeat(FaultAction.DELIVER))

    def plan(method, path, body):
        return next(actions) if path == "/v1/batches" else FaultAction.DELIVER

    faulty = FaultInjectingChannel(secure_channel(backend), plan)
    uploader = make_uploader(agent, backend, clock, channel=faulty)
    uploader.register()
    agent.ingest(_steps(START_MS, 10))

    result = uploader.upload_cycle()
    assert result.outcome is CycleOutcome.UPLOADED
    assert result.attempts == 2  # server committed on the dropped-response attempt
    assert len(backend.handle_get_data(agent.device_pseudonym)) == 1
