from __future__ import annotations

import dataclasses
import json

import pytest

from privsense.scenario import (
    MEASURES,
    ScenarioConfig,
    make_fault_plan,
    run_scenario,
)
from privsense.transport import FaultAction


def _small(**overrides) -> ScenarioConfig:
    base = dict(days=5, required_pdd_days=3)
    base.update(overrides)
    return dataclasses.replace(ScenarioConfig(), **base)


def test_default_scenario_demonstrates_all_nine_measures():
    report = run_scenario(ScenarioConfig())
    assert report.passed, report.render_text()
    assert report.measures_passed == 9
    assert set(report.measure_status()) == set("ABCDEFGHI")


def test_scenario_without_consent_stores_nothing_anywhere(tmp_path):
    config = _small(consent_minute=None, optout_probe=False, work_dir=str(tmp_path))
    report = run_scenario(config)
    assert report.counts.get("primary.accepted", 0) == 0
    assert report.counts["primary.dropped_no_consent"] == report.counts["primary.events_generated"]
    # nothing on disk: not in the local store, not in backend persistence
    store = tmp_path / "store-primary.ndjson"
    assert store.read_bytes() == b""
    backend_dir = tmp_path / "backend" / "devices"
    assert not any(backend_dir.rglob("events.log"))
    # and the verdict is honest about unexercised measures
    assert not report.passed


@pytest.mark.parametrize("faults", ["drop_first", "chaos"])
def test_fault_injection_preserves_exactly_once_and_schedule(faults):
    report = run_scenario(_small(faults=faults))
    assert report.check("exactly_once_upload").passed, report.render_text()
    assert report.check("upload_schedule").passed
    assert report.check("leakage_audit").passed
    assert report.passed


def test_planted_leak_is_detected():
    report = run_scenario(_small(plant_leak=True))
    assert not report.check("leakage_audit").passed
    assert not report.passed


def test_planted_linkage_is_detected():
    report = run_scenario(_small(plant_unlink=True))
    assert not report.check("unlinkability").passed
    assert not report.check("join_impossibility").passed
    assert not report.passed


def test_report_renders_text_and_json():
    report = run_scenario(_small())
    text = report.render_text()
    assert "measures passing: 9/9" in text
    assert "result: PASS" in text
    for key in MEASURES:
        assert f"measure {key} " in text
    payload = report.to_json()
    assert payload["passed"] is True
    assert json.loads(json.dumps(payload)) == payload


def test_scenario_config_from_text():
    config = ScenarioConfig.from_text(
        """
        seed = 7
        days = 4
        faults = chaos
        rate.steps = 50
        perm.0 = 0:location:on
        perm.1 = 2:location:off
        consent_minute = 15
        required_pdd_days = 2
        """
    )
    assert config.seed == 7
    assert config.days == 4
    assert config.faults == "chaos"
    assert config.rates["steps"] == 50
    assert config.permission_script[1][2] is False
    assert config.consent_minute == 15


def test_scenario_config_rejects_bad_values():
    from privsense.errors import ConfigError

    with pytest.raises(ConfigError):
        ScenarioConfig.from_text("mode = carrier-pigeon")
    with pytest.raises(ConfigError):
        ScenarioConfig.from_text("perm.0 = nonsense")
    with pytest.raises(ConfigError):
        ScenarioConfig.from_text("rate.steps = fast")


def test_chaos_plan_never_exceeds_three_consecutive_failures():
    plan = make_fault_plan("chaos", seed=123, chaos_rate=0.9)
    failures_in_a_row = 0
    for _ in range(5000):
        action = plan("POST", "/v1/batches", b"x")
        if action in (FaultAction.DROP_REQUEST, FaultAction.DROP_RESPONSE):
            failures_in_a_row += 1
            assert failures_in_a_row <= 4
        else:
            failures_in_a_row = 0


def test_loopback_mode_passes_the_same_checks(tmp_path):
    config = _small(
        days=3,
        required_pdd_days=2,
        mode="loopback",
        work_dir=str(tmp_path),
    )
    report = run_scenario(config)
    assert report.passed, report.render_text()
    assert report.measures_passed == 9
    assert report.mode == "loopback"
