"""Operator command line.

Subcommands: simulate, agent run, backend serve, enroll serve, view,
audit, scenario run, catalog export. Each is a thin wrapper over the
library; see README for walkthroughs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from datetime import date, timedelta
from pathlib import Path

from . import catalog, httpd
from .agent import AgentConfig, DeviceAgent, summarize_stored_events
from .anonymize import PlaintextRegistry, audit_batch, is_digest_shaped
from .api import BackendApi, EnrollmentApi
from .backend import BackendService
from .catalog import PermissionKind, Sensitivity
from .enrollment import EnrollmentService
from .errors import PrivsenseError
from .records import dump_events, parse_event_lines
from .runtime import SeededRandomness, VirtualClock, parse_utc_offset
from .scenario import ScenarioConfig, _parse_perm_entry, run_scenario
from .simulate import DEFAULT_RATES, SimProfile, simulate
from .transport import ChannelConfig, Uploader, upload_due


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except PrivsenseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privsense",
        description="Privacy-preserving context-data collection framework",
    )
    sub = parser.add_subparsers(dest="command")

    sim = sub.add_parser("simulate", help="generate a deterministic raw event stream")
    sim.add_argument("--seed", type=int, default=42)
    sim.add_argument("--days", type=int, default=10)
    sim.add_argument("--rate", action="append", default=[], metavar="SOURCE=PER_DAY")
    sim.add_argument("--consent-minute", default="0", help="minute of consent, or 'none'")
    sim.add_argument("--opt-out-day", type=int, default=None)
    sim.add_argument("--perm", action="append", default=[], metavar="DAY:KIND:on|off")
    sim.add_argument("--pdd-compliance", type=float, default=1.0)
    sim.add_argument("--out-dir", required=True)
    sim.set_defaults(func=_cmd_simulate)

    agent = sub.add_parser("agent", help="device agent operations")
    agent_sub = agent.add_subparsers(dest="agent_command")
    agent_run = agent_sub.add_parser("run", help="replay an event stream through an agent")
    agent_run.add_argument("--config", required=True, help="agent key=value config file")
    agent_run.add_argument("--events", required=True, help="raw event stream file")
    agent_run.add_argument("--store", default=None, help="local store output path")
    agent_run.add_argument("--backend-dir", default=None, help="run an in-process backend here")
    agent_run.add_argument("--backend-url", default=None, metavar="HOST:PORT")
    agent_run.add_argument("--pin", default=None, help="pinned server certificate fingerprint")
    agent_run.add_argument(
        "--grant", action="append", default=None, metavar="KIND",
        help="permission kinds to grant after consent (default: all)",
    )
    agent_run.set_defaults(func=_cmd_agent_run)

    backend = sub.add_parser("backend", help="backend service operations")
    backend_sub = backend.add_subparsers(dest="backend_command")
    backend_serve = backend_sub.add_parser("serve", help="serve the ingest API")
    backend_serve.add_argument("--port", type=int, default=0)
    backend_serve.add_argument("--data-dir", required=True)
    backend_serve.add_argument("--tls-dir", default=None)
    backend_serve.add_argument("--plaintext", action="store_true")
    backend_serve.set_defaults(func=_cmd_backend_serve)

    enroll = sub.add_parser("enroll", help="enrollment service operations")
    enroll_sub = enroll.add_subparsers(dest="enroll_command")
    enroll_serve = enroll_sub.add_parser("serve", help="serve the enrollment API")
    enroll_serve.add_argument("--port", type=int, default=0)
    enroll_serve.add_argument("--data-dir", required=True)
    enroll_serve.add_argument("--required-days", type=int, required=True)
    enroll_serve.add_argument("--allow-raffle", action="store_true")
    enroll_serve.add_argument("--tls-dir", default=None)
    enroll_serve.add_argument("--plaintext", action="store_true")
    enroll_serve.set_defaults(func=_cmd_enroll_serve)

    view = sub.add_parser("view", help="render summary tiles from a store file")
    view.add_argument("--store", required=True)
    view.add_argument("--source", required=True)
    group = view.add_mutually_exclusive_group(required=True)
    group.add_argument("--day", help="YYYY-MM-DD")
    group.add_argument("--week", help="YYYY-MM-DD (last day of the week)")
    view.add_argument("--timezone", default="UTC")
    view.set_defaults(func=_cmd_view)

    audit = sub.add_parser("audit", help="scan serialized bytes for registered plaintext")
    audit.add_argument("--batch", required=True, help="file with serialized output to audit")
    audit.add_argument("--registry", required=True, help="plaintext registry, one string per line")
    audit.add_argument("--manifest", default=None,
                       help="catalog manifest; also check event records against schema policies")
    audit.set_defaults(func=_cmd_audit)

    scenario = sub.add_parser("scenario", help="end-to-end scenario operations")
    scenario_sub = scenario.add_subparsers(dest="scenario_command")
    scenario_run = scenario_sub.add_parser("run", help="run a scenario and verify all measures")
    scenario_run.add_argument("--config", default=None, help="scenario key=value config file")
    scenario_run.add_argument("--seed", type=int, default=None)
    scenario_run.add_argument("--days", type=int, default=None)
    scenario_run.add_argument("--mode", choices=["inprocess", "loopback"], default=None)
    scenario_run.add_argument("--faults", choices=["none", "drop_first", "chaos"], default=None)
    scenario_run.add_argument("--required-days", type=int, default=None)
    scenario_run.add_argument("--plant-leak", action="store_true")
    scenario_run.add_argument("--plant-unlink", action="store_true")
    scenario_run.add_argument("--work-dir", default=None)
    scenario_run.add_argument("--report", default=None, help="write the text report here")
    scenario_run.add_argument("--json", action="store_true", help="print machine-readable summary")
    scenario_run.set_defaults(func=_cmd_scenario_run)

    cat = sub.add_parser("catalog", help="data source catalog operations")
    cat_sub = cat.add_subparsers(dest="catalog_command")
    cat_export = cat_sub.add_parser("export", help="write the machine-readable catalog manifest")
    cat_export.add_argument("--out", default=None)
    cat_export.set_defaults(func=_cmd_catalog_export)

    return parser


# -- simulate ---------------------------------------------------------------


def _cmd_simulate(args) -> int:
    rates = dict(DEFAULT_RATES)
    for entry in args.rate:
        source_id, _, value = entry.partition("=")
        rates[source_id.strip()] = float(value)
    consent_minute = None if args.consent_minute.lower() == "none" else int(args.consent_minute)
    script = tuple(_parse_perm_entry(raw) for raw in args.perm)
    profile = SimProfile(
        seed=args.seed,
        days=args.days,
        rates=rates,
        permission_script=script,
        pdd_compliance=args.pdd_compliance,
        consent_minute=consent_minute,
        opt_out_day=args.opt_out_day,
    )
    run = simulate(profile)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "events.ndjson").write_text(dump_events(run.events), encoding="utf-8")
    run.registry.save(out_dir / "registry.txt")
    with (out_dir / "ledger.jsonl").open("w", encoding="utf-8") as fh:
        for index, expected in enumerate(run.expected_outcomes):
            fh.write(json.dumps({"index": index, "expected": expected}) + "\n")
    print(
        f"simulated seed={args.seed} days={args.days}: {len(run.events)} events, "
        f"{len(run.registry)} registered plaintexts, {len(run.pdd_days)} diary days -> {out_dir}"
    )
    return 0


# -- agent run ---------------------------------------------------------------


def _cmd_agent_run(args) -> int:
    config = AgentConfig.from_file(args.config)
    events = list(parse_event_lines(Path(args.events).read_text(encoding="utf-8")))
    if not events:
        print("no events in stream", file=sys.stderr)
        return 2

    clock = VirtualClock(events[0].timestamp_ms)
    agent = DeviceAgent(config, clock, SeededRandomness(f"agent-run/{args.events}"),
                        store_path=args.store)
    agent.record_consent()

    kinds = (
        [PermissionKind(k) for k in args.grant] if args.grant is not None else list(PermissionKind)
    )
    for kind in kinds:
        agent.set_permission(kind, True)

    uploader = None
    if args.backend_url or args.backend_dir:
        if args.backend_url:
            if not args.pin:
                print("--backend-url requires --pin", file=sys.stderr)
                return 2
            host, _, port = args.backend_url.partition(":")
            channel = httpd.HttpsPinnedChannel(host, int(port), args.pin)
            pinned = args.pin
        else:
            service = BackendService(args.backend_dir, clock)
            api = BackendApi(service)
            from .transport import ChannelSecurity, InProcessChannel

            pinned = "local-backend"
            channel = InProcessChannel(api.handle, ChannelSecurity(True, pinned))
        uploader = Uploader(
            agent, channel, ChannelConfig(endpoint="backend", server_fingerprint=pinned),
            clock, SeededRandomness(f"agent-run-uploader/{args.events}"),
        )
        uploader.register()

    counts: dict[str, int] = {}
    for event in events:
        if event.timestamp_ms > clock.now_ms():
            clock.advance_to(event.timestamp_ms)
        outcome = agent.ingest(event).outcome.value
        counts[outcome] = counts.get(outcome, 0) + 1
        if uploader is not None and upload_due(clock.now_ms(), agent.last_upload_at_ms):
            uploader.upload_cycle()
    if uploader is not None and upload_due(clock.now_ms(), agent.last_upload_at_ms):
        uploader.upload_cycle()

    for outcome in sorted(counts):
        print(f"{outcome}: {counts[outcome]}")
    print(f"stored events: {len(agent.events)}")
    if uploader is not None:
        print(f"uploads: {len(uploader.successful_uploads)}; "
              f"pending: {len(agent.events) - uploader.high_water_mark}")
    if args.store:
        print(f"store written: {args.store}")
    return 0


# -- servers ------------------------------------------------------------------


def _tls_setup(args) -> tuple[tuple | None, str, dict]:
    if args.plaintext:
        return None, "none", {"fingerprint": "none", "transport": "plaintext"}
    tls_dir = args.tls_dir or str(Path(args.data_dir) / "tls")
    cert, key, fingerprint = httpd.generate_self_signed(tls_dir)
    return (cert, key), fingerprint, {"fingerprint": fingerprint, "transport": "tls"}


def _serve_forever(api_handle, port: int, tls: tuple | None, fingerprint: str) -> int:
    server, _thread, bound_port = httpd.serve(api_handle, port, tls)
    print(f"LISTENING port={bound_port} fingerprint={fingerprint}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def _cmd_backend_serve(args) -> int:
    tls, fingerprint, identity = _tls_setup(args)
    service = BackendService(args.data_dir)
    api = BackendApi(service, identity)
    return _serve_forever(api.handle, args.port, tls, fingerprint)


def _cmd_enroll_serve(args) -> int:
    tls, fingerprint, identity = _tls_setup(args)
    service = EnrollmentService(required_days=args.required_days, data_dir=args.data_dir)
    api = EnrollmentApi(service, identity, allow_raffle=args.allow_raffle)
    return _serve_forever(api.handle, args.port, tls, fingerprint)


# -- view ----------------------------------------------------------------------


def _cmd_view(args) -> int:
    events = list(parse_event_lines(Path(args.store).read_text(encoding="utf-8")))
    zone = parse_utc_offset(args.timezone)
    source = catalog.descriptor(args.source)

    if args.day:
        end = date.fromisoformat(args.day)
        start = end
        label = f"day {end.isoformat()}"
    else:
        end = date.fromisoformat(args.week)
        start = end - timedelta(days=6)
        label = f"week {start.isoformat()}..{end.isoformat()}"

    metrics = summarize_stored_events(events, args.source, start, end, zone)
    lines = [f"events {int(metrics['count'])}"]
    for spec in source.numeric_fields():
        if f"{spec.name}_min" in metrics:
            lines.append(
                f"{spec.name}: sum {metrics[f'{spec.name}_sum']:g}"
                f"  min {metrics[f'{spec.name}_min']:g}"
                f"  max {metrics[f'{spec.name}_max']:g}"
            )
        else:
            lines.append(f"{spec.name}: sum {metrics[f'{spec.name}_sum']:g}")
    print(_render_tile(f"{args.source} - {label}", lines))
    return 0


def _render_tile(title: str, lines: list[str]) -> str:
    width = max(len(title) + 4, *(len(line) + 4 for line in lines))
    top = f"+-- {title} " + "-" * (width - len(title) - 5) + "+"
    body = [f"| {line}" + " " * (width - len(line) - 3) + "|" for line in lines]
    bottom = "+" + "-" * (width - 2) + "+"
    return "\n".join([top, *body, bottom])


# -- audit ----------------------------------------------------------------------


def _cmd_audit(args) -> int:
    payload = Path(args.batch).read_bytes()
    registry = PlaintextRegistry.load(args.registry)
    violations = audit_batch(payload, registry)
    for violation in violations:
        print(f"LEAK {violation}")

    schema_violations = 0
    if args.manifest:
        schema_violations = _audit_against_manifest(payload, Path(args.manifest))

    if violations or schema_violations:
        print(f"audit FAILED: {len(violations)} plaintext leaks, "
              f"{schema_violations} schema violations")
        return 1
    print(f"audit OK: 0 hits across {len(registry)} registered plaintexts, "
          f"{len(payload)} bytes scanned")
    return 0


def _audit_against_manifest(payload: bytes, manifest_path: Path) -> int:
    """Cross-check event records against per-field policies from a manifest."""
    policies: dict[str, dict[str, str]] = {}
    for line in manifest_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        policies[row["source_id"]] = {f["name"]: f["sensitivity"] for f in row["fields"]}

    violations = 0
    try:
        events = list(parse_event_lines(payload.decode("utf-8")))
    except (ValueError, KeyError, UnicodeDecodeError):
        print("note: payload is not an event stream; schema checks skipped")
        return 0
    for index, event in enumerate(events):
        fields = policies.get(event.source_id)
        if fields is None:
            print(f"SCHEMA record {index}: unknown source {event.source_id!r}")
            violations += 1
            continue
        for name, value in event.payload.items():
            sensitivity = fields.get(name)
            if sensitivity == Sensitivity.DROP.value:
                print(f"SCHEMA record {index}: drop-field {name!r} present")
                violations += 1
            elif sensitivity == Sensitivity.PSEUDONYMIZE.value and event.anonymized:
                if not is_digest_shaped(value):
                    print(f"SCHEMA record {index}: field {name!r} not digest-shaped")
                    violations += 1
    return violations


# -- scenario --------------------------------------------------------------------


def _cmd_scenario_run(args) -> int:
    config = ScenarioConfig.from_file(args.config) if args.config else ScenarioConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.days is not None:
        overrides["days"] = args.days
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.faults is not None:
        overrides["faults"] = args.faults
    if args.required_days is not None:
        overrides["required_pdd_days"] = args.required_days
    if args.plant_leak:
        overrides["plant_leak"] = True
    if args.plant_unlink:
        overrides["plant_unlink"] = True
    if args.work_dir is not None:
        overrides["work_dir"] = args.work_dir
    if overrides:
        config = dataclasses.replace(config, **overrides)

    report = run_scenario(config)
    text = report.render_text()
    print(text)
    if args.json:
        print(json.dumps(report.to_json(), separators=(",", ":")))
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    return 0 if report.passed else 1


# -- catalog ----------------------------------------------------------------------


def _cmd_catalog_export(args) -> int:
    manifest = catalog.catalog_manifest()
    if args.out:
        Path(args.out).write_text(manifest, encoding="utf-8")
        print(f"manifest written: {args.out}")
    else:
        sys.stdout.write(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
