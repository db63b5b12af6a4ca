"""Deterministic device-behavior simulator.

Generates raw observation streams over all 18 catalog sources, fabricates
the sensitive strings (phone numbers, network identifiers, notification
contents) that anonymization must erase, registers every one of them in a
plaintext registry, and derives the gating outcome a correct agent must
produce for every single event.

Determinism contract: every stream is drawn from a PRNG seeded with
``{seed}/{source}/{day}/{purpose}``, so any part of a run can be
regenerated independently of generation order. Scheduling is per-minute
Bernoulli: on day ``d`` a source with daily rate ``r`` fires in a given
minute iff ``Random(f"{seed}/{source}/{d}/sched").random() < r / 1440``,
with an in-minute second offset drawn from the same stream right after a
hit. Weather events are kept only for hours in which a location event
fired on the same day.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field as dataclass_field

from . import catalog
from .anonymize import PlaintextRegistry
from .catalog import (
    Conditional,
    ContextEvent,
    NotRequired,
    PermissionKind,
    Required,
    SOURCE_IDS,
)
from .errors import InvalidProfileError
from .runtime import MS_PER_DAY, MS_PER_MINUTE, MS_PER_SECOND, from_rfc3339

MINUTES_PER_DAY = 1440

DEFAULT_START_MS = from_rfc3339("2026-01-05T00:00:00.000Z")

# Illustrative daily rates; no empirical claim behind them.
DEFAULT_RATES: dict[str, float] = {
    "location": 20,
    "weather": 8,
    "ambient_light": 40,
    "ambient_noise": 12,
    "accelerometer": 60,
    "activity": 20,
    "steps": 24,
    "phone_unlock": 40,
    "headphone_unplug": 6,
    "battery_charging": 24,
    "wifi": 12,
    "bluetooth": 10,
    "calls_metadata": 8,
    "music_metadata": 15,
    "photos_metadata": 5,
    "notifications_metadata": 45,
    "app_usage": 40,
    "app_traffic": 30,
}

# Shared across app usage, app traffic, notifications, and music players.
APP_PACKAGES = (
    "com.chat.bubble",
    "com.maps.trailfinder",
    "com.music.wavelet",
    "com.photo.lenscap",
    "com.news.daybreak",
    "com.fit.stride",
)

_ARTISTS = ("Nova Marsh", "Glass Harbor", "Liminal State", "Cedar & Pine")

_CONTENT_TEMPLATES = (
    "Are we still on for lunch?",
    "Your package arrives tomorrow",
    "New photo from the weekend trip",
    "Don't forget the 9am standup",
    "Call me back when you can",
)


@dataclass(frozen=True)
class SimProfile:
    """Behavior script for one simulated device."""

    seed: int
    days: int
    rates: dict[str, float] = dataclass_field(default_factory=lambda: dict(DEFAULT_RATES))
    permission_script: tuple[tuple[int, PermissionKind, bool], ...] = ()
    pdd_compliance: float = 1.0
    consent_minute: int | None = 0
    opt_out_day: int | None = None

    def validate(self) -> None:
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidProfileError("seed must fit in 64 bits")
        if self.days < 1:
            raise InvalidProfileError("days must be >= 1")
        for source_id, rate in self.rates.items():
            if source_id not in SOURCE_IDS:
                raise InvalidProfileError(f"rate for unknown source {source_id!r}")
            if not 0 <= rate <= MINUTES_PER_DAY:
                raise InvalidProfileError(
                    f"rate for {source_id} must be within [0, {MINUTES_PER_DAY}] per day"
                )
        if not 0.0 <= self.pdd_compliance <= 1.0:
            raise InvalidProfileError("pdd_compliance must be a probability")
        for day, kind, _granted in self.permission_script:
            if not 0 <= day < self.days:
                raise InvalidProfileError(f"permission script day {day} out of range")
            if not isinstance(kind, PermissionKind):
                raise InvalidProfileError(f"bad permission kind {kind!r}")
        if self.consent_minute is not None and self.consent_minute < 0:
            raise InvalidProfileError("consent_minute must be >= 0")
        if self.opt_out_day is not None and not 0 <= self.opt_out_day < self.days:
            raise InvalidProfileError("opt_out_day out of range")


@dataclass
class SimRun:
    """Everything a scenario needs to drive and verify an agent."""

    profile: SimProfile
    start_ms: int
    events: list[ContextEvent]
    expected_outcomes: list[str]  # aligned with events
    registry: PlaintextRegistry
    pdd_days: list[int]  # day indices the simulated user completes the diary


@dataclass(frozen=True)
class _Vocab:
    phone_numbers: tuple[str, ...]
    ssids: tuple[str, ...]
    bssids: tuple[str, ...]
    bt_macs: tuple[str, ...]


def _mac(rng: random.Random) -> str:
    return ":".join(f"{rng.randrange(256):02x}" for _ in range(6))


def _build_vocab(seed: int, registry: PlaintextRegistry) -> _Vocab:
    rng = random.Random(f"{seed}/vocab")
    phone_numbers = tuple(
        "+49" + "".join(str(rng.randrange(10)) for _ in range(9)) for _ in range(8)
    )
    ssid_words = ("HomeNet", "CafeCorner", "Linksys", "FritzBox", "AirportFree")
    ssids = tuple(f"{word}-{rng.randrange(10)}{chr(rng.randrange(71, 91))}" for word in ssid_words)
    bssids = tuple(_mac(rng) for _ in ssids)
    bt_macs = tuple(_mac(rng) for _ in range(6))
    for value in phone_numbers + ssids + bssids + bt_macs:
        registry.add(value)
    return _Vocab(phone_numbers, ssids, bssids, bt_macs)


def _payload_for(
    source_id: str,
    rng: random.Random,
    event_ms: int,
    vocab: _Vocab,
    registry: PlaintextRegistry,
    content_counter: list[int],
) -> dict[str, object]:
    if source_id == "location":
        return {
            "lat": round(52.52 + rng.uniform(-0.05, 0.05), 6),
            "lon": round(13.405 + rng.uniform(-0.05, 0.05), 6),
            "accuracy_m": round(rng.uniform(3.0, 50.0), 1),
        }
    if source_id == "weather":
        return {
            "temp_c": round(rng.uniform(-5.0, 30.0), 1),
            "humidity_pct": round(rng.uniform(20.0, 95.0), 1),
        }
    if source_id == "ambient_light":
        return {"lux": round(rng.uniform(0.0, 20000.0), 1)}
    if source_id == "ambient_noise":
        return {"level_db": round(rng.uniform(25.0, 95.0), 1)}
    if source_id == "accelerometer":
        return {
            "x": round(rng.uniform(-2.0, 2.0), 3),
            "y": round(rng.uniform(-2.0, 2.0), 3),
            "z": round(rng.uniform(-2.0, 2.0), 3),
        }
    if source_id == "activity":
        return {
            "kind": rng.choice(("still", "walking", "running", "cycling", "in_vehicle")),
            "confidence": round(rng.uniform(0.5, 1.0), 2),
        }
    if source_id == "steps":
        return {"count": rng.randrange(20, 400)}
    if source_id == "phone_unlock":
        return {"locked": rng.random() < 0.5}
    if source_id == "headphone_unplug":
        return {"connected": rng.random() < 0.5}
    if source_id == "battery_charging":
        return {"level_pct": rng.randrange(5, 101), "charging": rng.random() < 0.3}
    if source_id == "wifi":
        index = rng.randrange(len(vocab.ssids))
        return {
            "ssid": vocab.ssids[index],
            "bssid": vocab.bssids[index],
            "connected": rng.random() < 0.8,
        }
    if source_id == "bluetooth":
        return {
            "peer_mac": rng.choice(vocab.bt_macs),
            "event": rng.choice(("seen", "connected", "disconnected")),
        }
    if source_id == "calls_metadata":
        return {
            "peer_number": rng.choice(vocab.phone_numbers),
            "direction": rng.choice(("incoming", "outgoing")),
            "duration_s": rng.randrange(5, 3600),
        }
    if source_id == "music_metadata":
        return {
            "title": f"Track {rng.randrange(1, 500)}",
            "artist": rng.choice(_ARTISTS),
            "player_package": rng.choice(APP_PACKAGES),
        }
    if source_id == "photos_metadata":
        width, height = rng.choice(((3024, 4032), (1080, 1920), (2160, 3840)))
        return {
            "width": width,
            "height": height,
            "flash": rng.random() < 0.2,
            "taken_at": event_ms - rng.randrange(0, 5 * MS_PER_SECOND),
        }
    if source_id == "notifications_metadata":
        content_counter[0] += 1
        content = f"{rng.choice(_CONTENT_TEMPLATES)} (ref #{content_counter[0]:05d})"
        registry.add(content)
        return {
            "app_package": rng.choice(APP_PACKAGES),
            "content": content,
            "posted": rng.random() < 0.9,
        }
    if source_id == "app_usage":
        return {
            "app_package": rng.choice(APP_PACKAGES),
            "foreground_ms": rng.randrange(1_000, 3_600_000),
        }
    if source_id == "app_traffic":
        return {
            "app_package": rng.choice(APP_PACKAGES),
            "rx_bytes": rng.randrange(0, 5_000_000),
            "tx_bytes": rng.randrange(0, 1_000_000),
        }
    raise InvalidProfileError(f"no payload generator for {source_id!r}")


def _scheduled_minutes(seed: int, source_id: str, day: int, rate: float) -> list[tuple[int, int]]:
    """(minute, second) hits for one source-day, per the documented scheme."""
    rng = random.Random(f"{seed}/{source_id}/{day}/sched")
    probability = rate / MINUTES_PER_DAY
    hits = []
    for minute in range(MINUTES_PER_DAY):
        if rng.random() < probability:
            hits.append((minute, rng.randrange(60)))
    return hits


class _GateModel:
    """Shadow gating model used to derive expected outcomes.

    Independent of DeviceAgent: it resolves consent, opt-out, and grant
    state purely from the profile script and the event instant.
    """

    def __init__(self, profile: SimProfile, start_ms: int):
        self.consent_at_ms = (
            start_ms + profile.consent_minute * MS_PER_MINUTE
            if profile.consent_minute is not None
            else None
        )
        self.opt_out_at_ms = (
            start_ms + profile.opt_out_day * MS_PER_DAY
            if profile.opt_out_day is not None
            else None
        )
        # Script entries apply at their day start; day-0 entries cannot
        # precede consent, since permissions are managed post-consent.
        self.grant_timeline: list[tuple[int, PermissionKind, bool]] = []
        if self.consent_at_ms is not None:
            for day, kind, granted in profile.permission_script:
                effective = max(start_ms + day * MS_PER_DAY, self.consent_at_ms)
                self.grant_timeline.append((effective, kind, granted))
            self.grant_timeline.sort(key=lambda entry: entry[0])

    def _granted(self, kind: PermissionKind, at_ms: int) -> bool:
        state = False
        for effective, entry_kind, granted in self.grant_timeline:
            if effective > at_ms:
                break
            if entry_kind == kind:
                state = granted
        return state

    def _requirement_satisfied(self, source_id: str, at_ms: int) -> bool:
        requirement = catalog.permission_requirement(source_id)
        while isinstance(requirement, Conditional):
            requirement = catalog.permission_requirement(requirement.depends_on)
        if isinstance(requirement, NotRequired):
            return True
        assert isinstance(requirement, Required)
        return self._granted(requirement.kind, at_ms)

    def expected_outcome(self, event: ContextEvent) -> str:
        at = event.timestamp_ms
        if self.opt_out_at_ms is not None and at >= self.opt_out_at_ms:
            return "dropped_opted_out"
        if self.consent_at_ms is None or at < self.consent_at_ms:
            return "dropped_no_consent"
        if not self._requirement_satisfied(event.source_id, at):
            return "dropped_no_permission"
        return "accepted"


def simulate(profile: SimProfile, start_ms: int = DEFAULT_START_MS) -> SimRun:
    """Generate the full raw stream, registry, and expected-outcome ledger."""
    profile.validate()
    registry = PlaintextRegistry()
    vocab = _build_vocab(profile.seed, registry)
    content_counter = [0]
    catalog_order = {source_id: i for i, source_id in enumerate(SOURCE_IDS)}

    keyed: list[tuple[int, int, int, ContextEvent]] = []
    for day in range(profile.days):
        location_hours: set[int] = set()
        for source_id in SOURCE_IDS:
            rate = profile.rates.get(source_id, 0.0)
            if rate <= 0:
                continue
            hits = _scheduled_minutes(profile.seed, source_id, day, rate)
            if source_id == "location":
                location_hours = {minute // 60 for minute, _second in hits}
            elif source_id == "weather":
                hits = [(m, s) for m, s in hits if m // 60 in location_hours]
            payload_rng = random.Random(f"{profile.seed}/{source_id}/{day}/payload")
            for sequence, (minute, second) in enumerate(hits):
                event_ms = (
                    start_ms
                    + day * MS_PER_DAY
                    + minute * MS_PER_MINUTE
                    + second * MS_PER_SECOND
                )
                payload = _payload_for(
                    source_id, payload_rng, event_ms, vocab, registry, content_counter
                )
                event = ContextEvent(
                    device_pseudonym="",
                    source_id=source_id,
                    timestamp_ms=event_ms,
                    payload=payload,
                    anonymized=False,
                )
                keyed.append((event_ms, catalog_order[source_id], sequence, event))

    keyed.sort(key=lambda item: item[:3])
    events = [item[3] for item in keyed]

    gates = _GateModel(profile, start_ms)
    expected = [gates.expected_outcome(event) for event in events]

    pdd_days = [
        day
        for day in range(profile.days)
        if random.Random(f"{profile.seed}/pdd/{day}").random() < profile.pdd_compliance
    ]

    return SimRun(
        profile=profile,
        start_ms=start_ms,
        events=events,
        expected_outcomes=expected,
        registry=registry,
        pdd_days=pdd_days,
    )
