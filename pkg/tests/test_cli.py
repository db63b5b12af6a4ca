from __future__ import annotations

import json

import pytest

from privsense.cli import main


AGENT_CFG = """
backend_url = https://127.0.0.1:0/
required_pdd_days = 3
timezone = +00:00
ethics_approval_ref = IRB-2026-0117
policy_version = policy-1
"""


@pytest.fixture
def sim_dir(tmp_path):
    out = tmp_path / "sim"
    code = main([
        "simulate", "--seed", "11", "--days", "2",
        "--rate", "steps=40", "--rate", "wifi=20", "--rate", "calls_metadata=10",
        "--out-dir", str(out),
    ])
    assert code == 0
    return out


def test_simulate_writes_stream_registry_ledger(sim_dir):
    events = (sim_dir / "events.ndjson").read_text().strip().split("\n")
    assert events
    record = json.loads(events[0])
    assert record["anonymized"] is False
    registry = (sim_dir / "registry.txt").read_text().strip().split("\n")
    assert registry
    ledger = [json.loads(l) for l in (sim_dir / "ledger.jsonl").read_text().strip().split("\n")]
    assert len(ledger) == len(events)
    assert {row["expected"] for row in ledger} <= {
        "accepted", "dropped_no_consent", "dropped_no_permission", "dropped_opted_out",
    }


def test_agent_run_view_audit_round_trip(tmp_path, sim_dir, capsys):
    config_path = tmp_path / "agent.cfg"
    config_path.write_text(AGENT_CFG)
    store = tmp_path / "store.ndjson"

    code = main([
        "agent", "run",
        "--config", str(config_path),
        "--events", str(sim_dir / "events.ndjson"),
        "--store", str(store),
        "--backend-dir", str(tmp_path / "backend"),
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "accepted:" in out
    assert store.read_bytes() != b""

    # view renders a tile whose numbers match an independent fold
    first_event = json.loads(store.read_text().split("\n", 1)[0])
    day = first_event["timestamp"][:10]
    code = main(["view", "--store", str(store), "--source", "steps", "--day", day])
    assert code == 0
    tile = capsys.readouterr().out
    assert "steps" in tile

    from privsense.agent import summarize_stored_events
    from privsense.records import parse_event_lines
    from privsense.runtime import parse_utc_offset
    from datetime import date

    events = list(parse_event_lines(store.read_text()))
    metrics = summarize_stored_events(
        events, "steps", date.fromisoformat(day), date.fromisoformat(day),
        parse_utc_offset("UTC"),
    )
    assert f"events {int(metrics['count'])}" in tile
    assert f"sum {metrics['count_sum']:g}" in tile

    # weekly tile folds the seven days ending at the given date
    code = main(["view", "--store", str(store), "--source", "steps", "--week", day])
    assert code == 0
    week_tile = capsys.readouterr().out
    assert "week" in week_tile and "steps" in week_tile

    # the anonymized store audits clean against the full registry
    code = main([
        "audit", "--batch", str(store), "--registry", str(sim_dir / "registry.txt"),
    ])
    assert code == 0
    assert "audit OK" in capsys.readouterr().out


def test_audit_detects_planted_plaintext(tmp_path, sim_dir, capsys):
    registry_lines = (sim_dir / "registry.txt").read_text().strip().split("\n")
    planted = tmp_path / "leaky.bin"
    planted.write_bytes(b"prefix " + registry_lines[0].encode() + b" suffix")
    code = main(["audit", "--batch", str(planted), "--registry", str(sim_dir / "registry.txt")])
    assert code == 1
    out = capsys.readouterr().out
    assert "LEAK" in out


def test_audit_manifest_schema_check(tmp_path, capsys):
    manifest = tmp_path / "manifest.jsonl"
    assert main(["catalog", "export", "--out", str(manifest)]) == 0
    capsys.readouterr()

    bad_store = tmp_path / "bad.ndjson"
    bad_store.write_text(
        json.dumps({
            "device_pseudonym": "ab" * 16,
            "source_id": "notifications_metadata",
            "timestamp": "2026-01-05T10:00:00.000Z",
            "anonymized": True,
            "schema_version": 1,
            "payload": {"app_package": "com.x", "content": "should be gone", "posted": True},
        }) + "\n"
    )
    registry = tmp_path / "registry.txt"
    registry.write_text("unrelated-string-#1\n")
    code = main([
        "audit", "--batch", str(bad_store), "--registry", str(registry),
        "--manifest", str(manifest),
    ])
    assert code == 1
    assert "drop-field" in capsys.readouterr().out


def test_catalog_export_stdout(capsys):
    assert main(["catalog", "export"]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert len(lines) == 18


def test_scenario_run_cli_exit_codes(capsys):
    code = main([
        "scenario", "run", "--days", "4", "--required-days", "2", "--json",
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert "result: PASS" in out
    summary = json.loads(out.strip().split("\n")[-1])
    assert summary["passed"] is True

    code = main([
        "scenario", "run", "--days", "4", "--required-days", "2", "--plant-leak",
    ])
    capsys.readouterr()
    assert code == 1


def test_scenario_run_reads_config_file(tmp_path, capsys):
    config = tmp_path / "scenario.cfg"
    config.write_text("seed = 5\ndays = 3\nrequired_pdd_days = 2\n")
    report_path = tmp_path / "report.txt"
    code = main([
        "scenario", "run", "--config", str(config), "--report", str(report_path),
    ])
    capsys.readouterr()
    assert code == 0
    assert "result: PASS" in report_path.read_text()
