"""End-to-end scenario runner.

Drives one or more simulated devices through the full lifecycle — init,
consent, permissions, ingestion, daily upload cycles, summaries, diary
completion, compensation enrollment — against live backend and
enrollment services, then verifies every privacy measure with an
executed assertion and writes a pass/fail report.

Two wiring modes run the identical scenario logic: ``inprocess`` binds
the agent to the services through in-process channels; ``loopback``
spawns the services as separate processes and talks to them over
pinned-certificate TLS on localhost.
"""

from __future__ import annotations

import json
import random
import tempfile
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Callable

from .agent import AgentConfig, DeviceAgent
from .anonymize import PlaintextRegistry, audit_batch, is_digest_shaped
from .api import BackendApi, EnrollmentApi
from .backend import BackendService
from .catalog import ContextEvent, PermissionKind
from .config import get_bool, get_float, get_int, load_kv, parse_kv
from .enrollment import EnrollmentService, unlinkability_check
from .errors import (
    ChannelInsecureError,
    ConfigError,
    MissingEthicsApprovalError,
)
from .records import event_from_record, event_key, event_line
from .runtime import (
    MS_PER_DAY,
    MS_PER_HOUR,
    MS_PER_MINUTE,
    SeededRandomness,
    VirtualClock,
    from_rfc3339,
    local_date,
    parse_utc_offset,
)
from .simulate import DEFAULT_RATES, SimProfile, SimRun, simulate
from .transport import (
    Channel,
    ChannelConfig,
    ChannelSecurity,
    CycleOutcome,
    FaultAction,
    FaultInjectingChannel,
    InProcessChannel,
    RecordingChannel,
    Uploader,
)

DEFAULT_PERMISSION_SCRIPT: tuple[tuple[int, PermissionKind, bool], ...] = (
    (0, PermissionKind.LOCATION, True),
    (0, PermissionKind.MICROPHONE, True),
    (0, PermissionKind.CALLS, True),
    (0, PermissionKind.PHOTOS, True),
    (0, PermissionKind.NOTIFICATIONS, True),
    (0, PermissionKind.APP_USAGE, True),
    (3, PermissionKind.LOCATION, False),
    (5, PermissionKind.LOCATION, True),
)

_OPTOUT_PROBE_RATES = {
    "steps": 20,
    "wifi": 10,
    "calls_metadata": 6,
    "notifications_metadata": 15,
    "battery_charging": 10,
}


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 42
    days: int = 10
    timezone: str = "+01:00"
    start: str = "2026-01-05T00:00:00.000Z"
    rates: dict[str, float] = dataclass_field(default_factory=lambda: dict(DEFAULT_RATES))
    permission_script: tuple[tuple[int, PermissionKind, bool], ...] = DEFAULT_PERMISSION_SCRIPT
    consent_minute: int | None = 30
    pdd_compliance: float = 1.0
    required_pdd_days: int = 7
    policy_version: str = "policy-2026-01"
    ethics_approval_ref: str = "IRB-2026-0117"
    contact: str = "participant42@example.org"
    faults: str = "none"  # none | drop_first | chaos
    chaos_rate: float = 0.3
    optout_probe: bool = True
    plant_leak: bool = False
    plant_unlink: bool = False
    mode: str = "inprocess"  # inprocess | loopback
    work_dir: str | None = None

    @classmethod
    def from_kv(cls, values: dict[str, str]) -> "ScenarioConfig":
        base = cls()
        rates = dict(DEFAULT_RATES)
        for source_id, raw in _prefixed(values, "rate").items():
            try:
                rates[source_id] = float(raw)
            except ValueError:
                raise ConfigError(f"rate.{source_id}: expected number, got {raw!r}") from None

        script: list[tuple[int, PermissionKind, bool]] = []
        perm_entries = _prefixed(values, "perm")
        if perm_entries:
            for index in sorted(perm_entries, key=_int_key):
                script.append(_parse_perm_entry(perm_entries[index]))
        else:
            script = list(DEFAULT_PERMISSION_SCRIPT)

        consent_raw = values.get("consent_minute", str(base.consent_minute))
        consent_minute = None if consent_raw.lower() == "none" else int(consent_raw)

        mode = values.get("mode", base.mode)
        if mode not in ("inprocess", "loopback"):
            raise ConfigError(f"mode must be inprocess or loopback, got {mode!r}")
        faults = values.get("faults", base.faults)
        if faults not in ("none", "drop_first", "chaos"):
            raise ConfigError(f"faults must be none, drop_first, or chaos, got {faults!r}")

        return cls(
            seed=get_int(values, "seed", base.seed),
            days=get_int(values, "days", base.days),
            timezone=values.get("timezone", base.timezone),
            start=values.get("start", base.start),
            rates=rates,
            permission_script=tuple(script),
            consent_minute=consent_minute,
            pdd_compliance=get_float(values, "pdd_compliance", base.pdd_compliance),
            required_pdd_days=get_int(values, "required_pdd_days", base.required_pdd_days),
            policy_version=values.get("policy_version", base.policy_version),
            ethics_approval_ref=values.get("ethics_approval_ref", base.ethics_approval_ref),
            contact=values.get("contact", base.contact),
            faults=faults,
            chaos_rate=get_float(values, "chaos_rate", base.chaos_rate),
            optout_probe=get_bool(values, "optout_probe", base.optout_probe),
            plant_leak=get_bool(values, "plant_leak", False),
            plant_unlink=get_bool(values, "plant_unlink", False),
            mode=mode,
            work_dir=values.get("work_dir"),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        return cls.from_kv(load_kv(path))

    @classmethod
    def from_text(cls, text: str) -> "ScenarioConfig":
        return cls.from_kv(parse_kv(text))


def _prefixed(values: dict[str, str], prefix: str) -> dict[str, str]:
    head = prefix + "."
    return {k[len(head):]: v for k, v in values.items() if k.startswith(head)}


def _int_key(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"permission script keys must be perm.<n>, got perm.{text}") from None


def _parse_perm_entry(raw: str) -> tuple[int, PermissionKind, bool]:
    parts = raw.split(":")
    if len(parts) != 3:
        raise ConfigError(f"permission entry must be day:kind:on|off, got {raw!r}")
    day_text, kind_text, state = parts
    try:
        kind = PermissionKind(kind_text.strip().lower())
    except ValueError:
        raise ConfigError(f"unknown permission kind {kind_text!r}") from None
    if state.strip().lower() not in ("on", "off"):
        raise ConfigError(f"permission state must be on or off, got {state!r}")
    return int(day_text), kind, state.strip().lower() == "on"


# -- fault plans ---------------------------------------------------------


def make_fault_plan(spec: str, seed: int, chaos_rate: float):
    """Per-request fault decisions for the agent-facing batch channel."""
    if spec == "none":
        return None

    if spec == "drop_first":
        seen: set[bytes] = set()

        def drop_first(method: str, path: str, body: bytes | None) -> FaultAction:
            if method == "POST" and path == "/v1/batches" and body is not None:
                if body not in seen:
                    seen.add(body)
                    return FaultAction.DROP_REQUEST
            return FaultAction.DELIVER

        return drop_first

    if spec == "chaos":
        rng = random.Random(f"{seed}/faults")
        consecutive_failures = [0]

        def chaos(method: str, path: str, body: bytes | None) -> FaultAction:
            # Never exceed three failures in a row: the retry budget is
            # five tries, so every cycle still converges.
            if consecutive_failures[0] >= 3:
                consecutive_failures[0] = 0
                return rng.choice(
                    (FaultAction.DELIVER, FaultAction.DELIVER_TWICE, FaultAction.REPLAY_PREVIOUS)
                )
            roll = rng.random()
            if roll < chaos_rate / 2:
                consecutive_failures[0] += 1
                return FaultAction.DROP_REQUEST
            if roll < chaos_rate:
                consecutive_failures[0] += 1
                return FaultAction.DROP_RESPONSE
            consecutive_failures[0] = 0
            if roll < chaos_rate + 0.1:
                return FaultAction.DELIVER_TWICE
            if roll < chaos_rate + 0.15:
                return FaultAction.REPLAY_PREVIOUS
            return FaultAction.DELIVER

        return chaos

    raise ConfigError(f"unknown fault plan {spec!r}")


# -- report ---------------------------------------------------------------

MEASURES: dict[str, tuple[str, tuple[str, ...]]] = {
    "A": ("user consent gate", ("consent_gate", "ledger_agreement")),
    "B": ("participants view their own data", ("view_parity",)),
    "C": ("opt-out with full erasure", ("opt_out_erasure",)),
    "D": ("ethics approval gate", ("ethics_gate",)),
    "E": ("random identifiers, no login", ("random_identifiers",)),
    "F": (
        "on-device anonymization before storage",
        ("anonymize_before_store", "leakage_audit", "salt_confinement"),
    ),
    "G": ("runtime permission gating", ("permission_gating", "ledger_agreement")),
    "H": ("secured transfer only", ("secured_transfer", "exactly_once_upload", "upload_schedule")),
    "I": (
        "compensation unlinkable from collected data",
        ("unlinkability", "join_impossibility", "attestation_locality"),
    ),
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class ScenarioReport:
    seed: int
    days: int
    mode: str
    checks: list[CheckResult]
    counts: dict[str, int]

    def check(self, name: str) -> CheckResult:
        for result in self.checks:
            if result.name == name:
                return result
        raise KeyError(name)

    def measure_status(self) -> dict[str, bool]:
        by_name = {c.name: c.passed for c in self.checks}
        return {
            key: all(by_name.get(name, False) for name in names)
            for key, (_title, names) in MEASURES.items()
        }

    @property
    def measures_passed(self) -> int:
        return sum(1 for ok in self.measure_status().values() if ok)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def render_text(self) -> str:
        lines = [f"scenario seed={self.seed} days={self.days} mode={self.mode}"]
        width = max(len(c.name) for c in self.checks)
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            lines.append(f"  check {c.name:<{width}}  {status}  {c.detail}")
        status = self.measure_status()
        for key, (title, names) in MEASURES.items():
            mark = "ok" if status[key] else "FAILED"
            lines.append(f"  measure {key} {title:<42} {mark}  [{', '.join(names)}]")
        lines.append(
            f"  measures passing: {self.measures_passed}/{len(MEASURES)}"
        )
        for key in sorted(self.counts):
            lines.append(f"  count {key} = {self.counts[key]}")
        lines.append(f"result: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "days": self.days,
            "mode": self.mode,
            "checks": [
                {"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks
            ],
            "measures": self.measure_status(),
            "measures_passed": self.measures_passed,
            "counts": self.counts,
            "passed": self.passed,
        }


# -- service handles -------------------------------------------------------


@dataclass
class ServiceHandles:
    """Uniform access to the two services regardless of wiring mode."""

    backend_fingerprint: str
    enroll_fingerprint: str
    make_backend_channel: Callable[[], Channel]
    make_enroll_channel: Callable[[], Channel]
    make_insecure_channel: Callable[[], Channel]
    backend_persistence_bytes: Callable[[], bytes]
    cleanup: Callable[[], None]


def _inprocess_handles(work_dir: Path, clock: VirtualClock, required_days: int) -> ServiceHandles:
    backend_fp = "sim-backend-credential-1"
    enroll_fp = "sim-enroll-credential-1"
    backend = BackendService(work_dir / "backend", clock)
    enrollment = EnrollmentService(
        required_days=required_days, data_dir=work_dir / "enroll", clock=clock
    )
    backend_api = BackendApi(backend, {"fingerprint": backend_fp, "transport": "in-process"})
    enroll_api = EnrollmentApi(
        enrollment, {"fingerprint": enroll_fp, "transport": "in-process"}, allow_raffle=True
    )

    return ServiceHandles(
        backend_fingerprint=backend_fp,
        enroll_fingerprint=enroll_fp,
        make_backend_channel=lambda: InProcessChannel(
            backend_api.handle, ChannelSecurity(True, backend_fp)
        ),
        make_enroll_channel=lambda: InProcessChannel(
            enroll_api.handle, ChannelSecurity(True, enroll_fp)
        ),
        make_insecure_channel=lambda: InProcessChannel(
            backend_api.handle, ChannelSecurity(False, backend_fp)
        ),
        backend_persistence_bytes=backend.persistence_bytes,
        cleanup=lambda: None,
    )


def _loopback_handles(work_dir: Path, required_days: int) -> ServiceHandles:
    from . import httpd

    backend_dir = work_dir / "backend"
    enroll_dir = work_dir / "enroll"
    backend_proc = httpd.spawn_server(
        "backend", data_dir=backend_dir, tls_dir=work_dir / "tls-backend"
    )
    enroll_proc = httpd.spawn_server(
        "enroll",
        data_dir=enroll_dir,
        tls_dir=work_dir / "tls-enroll",
        extra_args=["--required-days", str(required_days), "--allow-raffle"],
    )

    def cleanup() -> None:
        backend_proc.stop()
        enroll_proc.stop()

    def persistence_bytes() -> bytes:
        chunks = []
        for path in sorted(backend_dir.rglob("*")):
            if path.is_file():
                chunks.append(path.read_bytes())
        return b"\n".join(chunks)

    return ServiceHandles(
        backend_fingerprint=backend_proc.fingerprint,
        enroll_fingerprint=enroll_proc.fingerprint,
        make_backend_channel=lambda: httpd.HttpsPinnedChannel(
            "127.0.0.1", backend_proc.port, backend_proc.fingerprint
        ),
        make_enroll_channel=lambda: httpd.HttpsPinnedChannel(
            "127.0.0.1", enroll_proc.port, enroll_proc.fingerprint
        ),
        make_insecure_channel=lambda: httpd.PlaintextChannel(
            "127.0.0.1", backend_proc.port, backend_proc.fingerprint
        ),
        backend_persistence_bytes=persistence_bytes,
        cleanup=cleanup,
    )


def _channel_json(channel: Channel, method: str, path: str, payload: dict | None = None):
    body = json.dumps(payload, separators=(",", ":")).encode("utf-8") if payload is not None else None
    status, response = channel.request(method, path, body)
    try:
        parsed = json.loads(response.decode("utf-8")) if response else {}
    except ValueError:
        parsed = {}
    return status, parsed


# -- device run -------------------------------------------------------------


@dataclass
class _DeviceRun:
    name: str
    profile: SimProfile
    sim: SimRun
    agent: DeviceAgent
    uploader: Uploader
    recorder: RecordingChannel
    outcomes: list[str] = dataclass_field(default_factory=list)
    uploaded_events: list[ContextEvent] = dataclass_field(default_factory=list)
    pdd_applied: int = 0
    deletion_fingerprints: list[bytes] = dataclass_field(default_factory=list)
    deleted: bool = False


_RANK_OPT_OUT = 0
_RANK_CONSENT = 1
_RANK_REGISTER = 2
_RANK_GRANT = 3
_RANK_EVENT = 4
_RANK_PDD = 5
_RANK_UPLOAD = 6


def run_scenario(config: ScenarioConfig) -> ScenarioReport:
    """Execute a full scenario and verify every privacy measure."""
    if config.work_dir:
        work_dir = Path(config.work_dir)
        work_dir.mkdir(parents=True, exist_ok=True)
        return _run_scenario_in(config, work_dir)
    with tempfile.TemporaryDirectory(prefix="privsense-scenario-") as tmp:
        return _run_scenario_in(config, Path(tmp))


def _run_scenario_in(config: ScenarioConfig, work_dir: Path) -> ScenarioReport:
    start_ms = from_rfc3339(config.start)
    clock = VirtualClock(start_ms)
    zone = parse_utc_offset(config.timezone)

    if config.mode == "loopback":
        handles = _loopback_handles(work_dir, config.required_pdd_days)
    else:
        handles = _inprocess_handles(work_dir, clock, config.required_pdd_days)

    try:
        return _execute(config, work_dir, clock, zone, handles, start_ms)
    finally:
        handles.cleanup()


def _make_device(
    config: ScenarioConfig,
    handles: ServiceHandles,
    clock: VirtualClock,
    work_dir: Path,
    name: str,
    profile: SimProfile,
    start_ms: int,
) -> _DeviceRun:
    sim = simulate(profile, start_ms)
    agent_config = AgentConfig(
        backend_url="https://127.0.0.1/",
        required_pdd_days=config.required_pdd_days,
        timezone=config.timezone,
        ethics_approval_ref=config.ethics_approval_ref,
        policy_version=config.policy_version,
    )
    randomness = SeededRandomness(f"{config.seed}/{name}")
    agent = DeviceAgent(
        agent_config, clock, randomness, store_path=work_dir / f"store-{name}.ndjson"
    )
    plan = make_fault_plan(config.faults, config.seed, config.chaos_rate)
    base = handles.make_backend_channel()
    channel: Channel = FaultInjectingChannel(base, plan) if plan else base
    recorder = RecordingChannel(channel)
    uploader = Uploader(
        agent,
        recorder,
        ChannelConfig(endpoint="backend", server_fingerprint=handles.backend_fingerprint),
        clock,
        randomness,
    )
    return _DeviceRun(
        name=name, profile=profile, sim=sim, agent=agent, uploader=uploader, recorder=recorder
    )


def _device_actions(device: _DeviceRun, start_ms: int) -> list[tuple]:
    actions: list[tuple] = []
    seq = 0

    def add(time_ms: int, rank: int, kind: str, payload: object = None):
        nonlocal seq
        actions.append((time_ms, rank, seq, device, kind, payload))
        seq += 1

    profile = device.profile
    if profile.consent_minute is not None:
        consent_at = start_ms + profile.consent_minute * MS_PER_MINUTE
        add(consent_at, _RANK_CONSENT, "consent")
        add(consent_at, _RANK_REGISTER, "register")
        for day, kind, granted in profile.permission_script:
            effective = max(start_ms + day * MS_PER_DAY, consent_at)
            add(effective, _RANK_GRANT, "grant", (kind, granted))
    if profile.opt_out_day is not None:
        add(start_ms + profile.opt_out_day * MS_PER_DAY, _RANK_OPT_OUT, "opt_out")
    for index, event in enumerate(device.sim.events):
        add(event.timestamp_ms, _RANK_EVENT, "event", (index, event))
    for day in device.sim.pdd_days:
        add(start_ms + day * MS_PER_DAY + 21 * MS_PER_HOUR, _RANK_PDD, "pdd", day)
    for day in range(profile.days):
        add(start_ms + (day + 1) * MS_PER_DAY - 1, _RANK_UPLOAD, "upload", day)
    return actions


def _execute(
    config: ScenarioConfig,
    work_dir: Path,
    clock: VirtualClock,
    zone,
    handles: ServiceHandles,
    start_ms: int,
) -> ScenarioReport:
    # script entries beyond the run horizon cannot take effect; clip them
    script = tuple(entry for entry in config.permission_script if entry[0] < config.days)
    primary_profile = SimProfile(
        seed=config.seed,
        days=config.days,
        rates=dict(config.rates),
        permission_script=script,
        pdd_compliance=config.pdd_compliance,
        consent_minute=config.consent_minute,
        opt_out_day=None,
    )
    devices = [
        _make_device(config, handles, clock, work_dir, "primary", primary_profile, start_ms)
    ]
    if config.optout_probe:
        probe_profile = SimProfile(
            seed=config.seed + 1000,
            days=config.days,
            rates=dict(_OPTOUT_PROBE_RATES),
            permission_script=tuple(
                (0, kind, True) for kind in PermissionKind
            ),
            pdd_compliance=0.0,
            consent_minute=0,
            opt_out_day=max(1, config.days // 2),
        )
        devices.append(
            _make_device(config, handles, clock, work_dir, "optout", probe_profile, start_ms)
        )

    admin = RecordingChannel(handles.make_backend_channel())
    enroll_channel = RecordingChannel(handles.make_enroll_channel())

    actions = []
    for device in devices:
        actions.extend(_device_actions(device, start_ms))
    actions.sort(key=lambda item: item[:3])

    upload_counts: dict[str, int] = {d.name: 0 for d in devices}

    for time_ms, _rank, _seq, device, kind, payload in actions:
        if time_ms > clock.now_ms():
            clock.advance_to(time_ms)

        if kind == "consent":
            device.agent.record_consent()
        elif kind == "register":
            device.uploader.register()
        elif kind == "grant":
            grant_kind, granted = payload
            device.agent.set_permission(grant_kind, granted)
        elif kind == "opt_out":
            _capture_fingerprints(device)
            request = device.agent.opt_out()
            status, _ = _channel_json(
                admin, "DELETE", f"/v1/devices/{request.device_pseudonym}"
            )
            device.deleted = status == 200
        elif kind == "event":
            _index, event = payload
            result = device.agent.ingest(event)
            device.outcomes.append(result.outcome.value)
        elif kind == "pdd":
            if device.agent.consent is not None and not device.agent.opted_out:
                device.agent.pdd_record(local_date(time_ms, zone))
                device.pdd_applied += 1
        elif kind == "upload":
            if not device.uploader.registered:
                continue
            before = device.uploader.high_water_mark
            result = device.uploader.upload_cycle()
            # Retry backoff drifts the clock past the scheduled instant;
            # wait out the remainder of the 24 h interval if needed.
            guard = 0
            while result.outcome is CycleOutcome.NOT_DUE and guard < 7200:
                clock.advance_ms(MS_PER_MINUTE)
                result = device.uploader.upload_cycle()
                guard += 1
            if result.outcome is CycleOutcome.UPLOADED:
                upload_counts[device.name] += 1
                device.uploaded_events.extend(
                    device.agent.events[before:device.uploader.high_water_mark]
                )

    # post-run probes and verdicts
    end_ms = start_ms + config.days * MS_PER_DAY + MS_PER_MINUTE
    if end_ms > clock.now_ms():
        clock.advance_to(end_ms)
    primary = devices[0]
    checks: list[CheckResult] = []
    counts: dict[str, int] = {}

    _plant_violations(config, devices, admin, enroll_channel, clock)

    checks.append(_check_ledger_agreement(devices))
    checks.append(_check_consent_gate(devices, start_ms))
    checks.append(_check_permission_gating(devices))
    checks.append(_check_anonymize_before_store(devices))
    checks.append(_check_view_parity(primary, admin, zone, clock))
    checks.append(_check_exactly_once(devices, admin))
    checks.append(_check_upload_schedule(devices, config.days))
    checks.append(_check_secured_transfer(handles, devices, clock))
    checks.append(_check_random_identifiers(devices, config, clock))
    checks.append(_check_ethics_gate(config, clock))
    checks.append(_check_opt_out_erasure(config, devices, admin, handles))
    enroll_checks, enrolled = _enroll_and_check(
        config, primary, admin, enroll_channel, handles, zone, start_ms, clock
    )
    checks.extend(enroll_checks)
    checks.append(_check_leakage(devices, handles, admin, enroll_channel))
    checks.append(_check_salt_confinement(devices, handles, admin))

    for device in devices:
        outcome_counts: dict[str, int] = {}
        for outcome in device.outcomes:
            outcome_counts[outcome] = outcome_counts.get(outcome, 0) + 1
        for outcome, count in outcome_counts.items():
            counts[f"{device.name}.{outcome}"] = count
        counts[f"{device.name}.events_generated"] = len(device.sim.events)
        counts[f"{device.name}.uploads"] = upload_counts[device.name]
        counts[f"{device.name}.registry_strings"] = len(device.sim.registry)
    counts["primary.pdd_completions"] = primary.pdd_applied
    counts["enrolled"] = int(enrolled)

    return ScenarioReport(
        seed=config.seed,
        days=config.days,
        mode=config.mode,
        checks=checks,
        counts=counts,
    )


def _capture_fingerprints(device: _DeviceRun) -> None:
    """Markers that identify this device's data and nothing else.

    Shared-vocabulary payload values (app package names, call directions)
    occur in other devices' events too, so the fingerprint set is the
    pseudonym, the device's salted digests (unique per salt), and each
    event's exact serialized line.
    """
    fingerprints: list[bytes] = [device.agent.device_pseudonym.encode()]
    for event in device.uploaded_events + device.agent.events:
        fingerprints.append(event_line(event).encode())
        for value in event.payload.values():
            if is_digest_shaped(value):
                fingerprints.append(str(value).encode())
    device.deletion_fingerprints = fingerprints


def _plant_violations(config, devices, admin, enroll_channel, clock) -> None:
    """Deliberate violations used to prove the checks can fail."""
    primary = devices[0]
    if config.plant_leak:
        ssid = next(s for s in primary.sim.registry if s.startswith("HomeNet"))
        forged = {
            "batch_id": "f" * 32,
            "device_pseudonym": primary.agent.device_pseudonym,
            "events": [
                {
                    "device_pseudonym": primary.agent.device_pseudonym,
                    "source_id": "wifi",
                    "timestamp": config.start,
                    "anonymized": True,  # the flag lies; the payload is raw
                    "schema_version": 1,
                    "payload": {"ssid": ssid, "bssid": "00:00:00:00:00:00", "connected": True},
                }
            ],
        }
        _channel_json(admin, "POST", "/v1/batches", forged)
    if config.plant_unlink:
        _channel_json(
            enroll_channel,
            "POST",
            "/v1/enroll",
            {
                "contact": primary.agent.device_pseudonym,  # deliberate linkage
                "enrollment_token": primary.agent.device_pseudonym,
                "attested_days": config.required_pdd_days,
            },
        )


def _check_ledger_agreement(devices: list[_DeviceRun]) -> CheckResult:
    mismatches = 0
    total = 0
    for device in devices:
        expected = device.sim.expected_outcomes
        got = device.outcomes
        total += len(expected)
        if len(expected) != len(got):
            mismatches += abs(len(expected) - len(got))
            continue
        mismatches += sum(1 for e, g in zip(expected, got) if e != g)
    return CheckResult(
        "ledger_agreement",
        mismatches == 0,
        f"{total} event outcomes compared, {mismatches} mismatches",
    )


def _check_consent_gate(devices: list[_DeviceRun], start_ms: int) -> CheckResult:
    violations = 0
    pre_consent_dropped = 0
    for device in devices:
        consent_minute = device.profile.consent_minute
        consent_at = (
            start_ms + consent_minute * MS_PER_MINUTE if consent_minute is not None else None
        )
        for event, outcome in zip(device.sim.events, device.outcomes):
            before_consent = consent_at is None or event.timestamp_ms < consent_at
            if before_consent:
                if outcome == "accepted":
                    violations += 1
                else:
                    pre_consent_dropped += 1
    return CheckResult(
        "consent_gate",
        violations == 0,
        f"{pre_consent_dropped} pre-consent events dropped, {violations} accepted before consent",
    )


def _check_permission_gating(devices: list[_DeviceRun]) -> CheckResult:
    primary = devices[0]
    expected = primary.sim.expected_outcomes
    got = primary.outcomes
    expected_denied = sum(1 for o in expected if o == "dropped_no_permission")
    got_denied = sum(1 for o in got if o == "dropped_no_permission")
    weather_indices = [
        i for i, e in enumerate(primary.sim.events) if e.source_id == "weather"
    ]
    weather_match = all(expected[i] == got[i] for i in weather_indices)
    weather_accepted = sum(1 for i in weather_indices if got[i] == "accepted")
    weather_denied = sum(1 for i in weather_indices if got[i] == "dropped_no_permission")
    # a scheduled revocation must actually produce denied events
    revocation_scheduled = any(
        not granted for _day, _kind, granted in primary.profile.permission_script
    )
    exercised = expected_denied > 0 or not revocation_scheduled
    passed = expected_denied == got_denied and weather_match and exercised
    return CheckResult(
        "permission_gating",
        passed,
        f"{got_denied} permission-denied outcomes (expected {expected_denied}); "
        f"weather accepted/denied = {weather_accepted}/{weather_denied}",
    )


def _check_anonymize_before_store(devices: list[_DeviceRun]) -> CheckResult:
    raw_stored = 0
    total = 0
    for device in devices:
        for event in device.agent.events:
            total += 1
            if not event.anonymized:
                raw_stored += 1
    return CheckResult(
        "anonymize_before_store",
        raw_stored == 0,
        f"{total} stored events, {raw_stored} non-anonymized",
    )


def _check_view_parity(primary: _DeviceRun, admin: RecordingChannel, zone, clock) -> CheckResult:
    status, payload = _channel_json(
        admin, "GET", f"/v1/devices/{primary.agent.device_pseudonym}/data"
    )
    if status != 200:
        return CheckResult("view_parity", False, f"backend data fetch failed: {status}")
    backend_events = [event_from_record(r) for r in payload["events"]]
    local_keys = sorted(event_key(e) for e in primary.agent.events)
    remote_keys = sorted(event_key(e) for e in backend_events)
    parity = local_keys == remote_keys
    line = primary.agent.status_line(["steps"]) if primary.agent.consent else ""
    status_ok = "steps" in line
    return CheckResult(
        "view_parity",
        parity and status_ok,
        f"{len(backend_events)} backend events match local store: {parity}; "
        f"status line renders: {status_ok}",
    )


def _check_exactly_once(devices: list[_DeviceRun], admin: RecordingChannel) -> CheckResult:
    details = []
    ok = True
    for device in devices:
        if device.deleted:
            continue
        status, payload = _channel_json(
            admin, "GET", f"/v1/devices/{device.agent.device_pseudonym}/data"
        )
        if status != 200:
            ok = False
            details.append(f"{device.name}: fetch failed {status}")
            continue
        backend_keys = sorted(
            event_key(event_from_record(r)) for r in payload["events"]
        )
        accepted_keys = sorted(event_key(e) for e in device.uploaded_events)
        stored_keys = sorted(event_key(e) for e in device.agent.events)
        if backend_keys != stored_keys or backend_keys != accepted_keys:
            ok = False
            details.append(
                f"{device.name}: backend={len(backend_keys)} uploaded={len(accepted_keys)} "
                f"stored={len(stored_keys)} mismatch"
            )
        else:
            details.append(f"{device.name}: {len(backend_keys)} events, multisets equal")
    return CheckResult("exactly_once_upload", ok, "; ".join(details))


def _check_upload_schedule(devices: list[_DeviceRun], days: int) -> CheckResult:
    primary = devices[0]
    acks = primary.uploader.successful_uploads
    gaps_ok = all(b - a >= 24 * MS_PER_HOUR for a, b in zip(acks, acks[1:]))
    count_ok = len(acks) == days
    return CheckResult(
        "upload_schedule",
        gaps_ok and count_ok,
        f"{len(acks)} uploads over {days} simulated days; all gaps >= 24h: {gaps_ok}",
    )


def _check_secured_transfer(handles: ServiceHandles, devices, clock) -> CheckResult:
    primary = devices[0]
    insecure = RecordingChannel(handles.make_insecure_channel())
    probe = Uploader(
        primary.agent,
        insecure,
        ChannelConfig(endpoint="backend", server_fingerprint=handles.backend_fingerprint),
        clock,
        SeededRandomness("insecure-probe"),
    )
    refused = False
    try:
        probe.register()
    except ChannelInsecureError:
        refused = True
    bytes_leaked = insecure.request_count
    return CheckResult(
        "secured_transfer",
        refused and bytes_leaked == 0,
        f"insecure channel refused: {refused}; requests that reached it: {bytes_leaked}",
    )


def _check_random_identifiers(devices, config: ScenarioConfig, clock) -> CheckResult:
    primary = devices[0]
    pid = primary.agent.device_pseudonym
    token = primary.agent.enrollment_token
    hex_ok = len(pid) == 32 and all(c in "0123456789abcdef" for c in pid)
    distinct = pid != token
    sibling = DeviceAgent(
        primary.agent.config, clock, SeededRandomness(f"{config.seed}/sibling")
    )
    fresh = sibling.device_pseudonym != pid
    return CheckResult(
        "random_identifiers",
        hex_ok and distinct and fresh,
        f"pseudonym is 32-hex: {hex_ok}; independent of enrollment token: {distinct}; "
        f"fresh init yields a new pseudonym: {fresh}",
    )


def _check_ethics_gate(config: ScenarioConfig, clock) -> CheckResult:
    refused = False
    try:
        DeviceAgent(
            AgentConfig(
                backend_url="https://127.0.0.1/",
                required_pdd_days=config.required_pdd_days,
                timezone=config.timezone,
                ethics_approval_ref="",
                policy_version=config.policy_version,
            ),
            clock,
            SeededRandomness("ethics-probe"),
        )
    except MissingEthicsApprovalError:
        refused = True
    return CheckResult(
        "ethics_gate", refused, f"init without ethics approval refused: {refused}"
    )


def _check_opt_out_erasure(
    config: ScenarioConfig, devices, admin: RecordingChannel, handles: ServiceHandles
) -> CheckResult:
    if not config.optout_probe:
        return CheckResult("opt_out_erasure", False, "opt-out probe disabled in config")
    probe = next(d for d in devices if d.name == "optout")
    local_empty = not probe.agent.events and probe.agent.opted_out
    store_empty = (
        probe.agent.store is None or probe.agent.store.read_bytes() == b""
    )
    status, _ = _channel_json(
        admin, "GET", f"/v1/devices/{probe.agent.device_pseudonym}/data"
    )
    backend_gone = status == 404
    persistence = handles.backend_persistence_bytes()
    hits = sum(1 for fp in probe.deletion_fingerprints if fp in persistence)
    post_optout_blocked = all(
        outcome == "dropped_opted_out"
        for event, outcome in zip(probe.sim.events, probe.outcomes)
        if probe.profile.opt_out_day is not None
        and event.timestamp_ms >= probe.sim.start_ms + probe.profile.opt_out_day * MS_PER_DAY
    )
    passed = local_empty and store_empty and backend_gone and hits == 0 and post_optout_blocked
    return CheckResult(
        "opt_out_erasure",
        passed,
        f"local store wiped: {local_empty and store_empty}; backend record gone: {backend_gone}; "
        f"fingerprint hits in persistence: {hits}; post-opt-out ingests blocked: {post_optout_blocked}",
    )


def _enroll_and_check(
    config: ScenarioConfig,
    primary: _DeviceRun,
    admin: RecordingChannel,
    enroll_channel: RecordingChannel,
    handles: ServiceHandles,
    zone,
    start_ms: int,
    clock,
) -> tuple[list[CheckResult], bool]:
    window = (
        local_date(start_ms, zone),
        local_date(start_ms + config.days * MS_PER_DAY - 1, zone),
    )
    complete = primary.agent.check_study_completion(config.required_pdd_days, window)
    backend_calls_before = admin.request_count + primary.recorder.request_count

    enrolled = False
    if complete:
        status, payload = _channel_json(
            enroll_channel,
            "POST",
            "/v1/enroll",
            {
                "contact": config.contact,
                "enrollment_token": primary.agent.enrollment_token,
                "attested_days": len(
                    [d for d in primary.agent.pdd_completions if window[0] <= d <= window[1]]
                ),
            },
        )
        enrolled = status == 200 and payload.get("accepted") is True

    backend_calls_after = admin.request_count + primary.recorder.request_count
    locality = backend_calls_after == backend_calls_before

    status_b, backend_export = _export_bytes(admin)
    status_e, enroll_export = _export_bytes(enroll_channel)
    unlink = (
        status_b == 200
        and status_e == 200
        and unlinkability_check(backend_export, enroll_export)
    )
    join_pairs = _equijoin_pairs(backend_export, enroll_export)

    checks = [
        CheckResult(
            "unlinkability",
            enrolled and unlink,
            f"enrolled: {enrolled}; exports unlinkable: {unlink}",
        ),
        CheckResult(
            "join_impossibility",
            not join_pairs,
            f"equi-join on all field pairs produced {len(join_pairs)} matches",
        ),
        CheckResult(
            "attestation_locality",
            locality,
            f"backend requests during enrollment: {backend_calls_after - backend_calls_before}",
        ),
    ]
    return checks, enrolled


def _export_bytes(channel: Channel) -> tuple[int, bytes]:
    status, body = channel.request("GET", "/v1/export", None)
    return status, body


def _equijoin_pairs(backend_export: bytes, enroll_export: bytes) -> list[tuple[str, str]]:
    def field_values(export: bytes) -> dict[str, set[str]]:
        mapping: dict[str, set[str]] = {}
        for line in export.decode("utf-8").splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            for key, value in row.items():
                values = value if isinstance(value, list) else [value]
                mapping.setdefault(key, set()).update(str(v) for v in values)
        return mapping

    backend_fields = field_values(backend_export)
    enroll_fields = field_values(enroll_export)
    pairs = []
    for bkey, bvalues in backend_fields.items():
        for ekey, evalues in enroll_fields.items():
            if bvalues & evalues:
                pairs.append((bkey, ekey))
    return pairs


def _check_leakage(
    devices: list[_DeviceRun],
    handles: ServiceHandles,
    admin: RecordingChannel,
    enroll_channel: RecordingChannel,
) -> CheckResult:
    registry = PlaintextRegistry()
    for device in devices:
        for value in device.sim.registry:
            registry.add(value)

    surfaces = {
        "local_store": b"\n".join(
            d.agent.store.read_bytes() for d in devices if d.agent.store is not None
        ),
        "wire": b"\n".join(
            [d.recorder.all_bytes() for d in devices]
            + [admin.all_bytes(), enroll_channel.all_bytes()]
        ),
        "backend_persistence": handles.backend_persistence_bytes(),
    }
    total_violations = 0
    details = []
    for name, payload in surfaces.items():
        violations = audit_batch(payload, registry)
        total_violations += len(violations)
        details.append(f"{name}: {len(violations)} hits over {len(payload)} bytes")
    return CheckResult(
        "leakage_audit",
        total_violations == 0,
        f"{len(registry)} registered plaintexts; " + "; ".join(details),
    )


def _check_salt_confinement(
    devices: list[_DeviceRun], handles: ServiceHandles, admin: RecordingChannel
) -> CheckResult:
    leaked = 0
    corpus = b"\n".join(
        [d.recorder.all_bytes() for d in devices]
        + [admin.all_bytes(), handles.backend_persistence_bytes()]
        + [d.agent.store.read_bytes() for d in devices if d.agent.store is not None]
    )
    for device in devices:
        if device.agent.salt.value.hex().encode() in corpus:
            leaked += 1
    return CheckResult(
        "salt_confinement", leaked == 0, f"device salts found in serialized output: {leaked}"
    )
