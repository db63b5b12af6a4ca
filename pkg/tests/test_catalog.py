from __future__ import annotations

import json

import pytest
from catalog_fixture import TABLE_ROWS, permission_as_tuple

from privsense import catalog
from privsense.catalog import (
    Category,
    Conditional,
    ContextEvent,
    NotRequired,
    PermissionKind,
    Required,
    SCHEMA_VERSION,
    Sensitivity,
    validate_event,
)
from privsense.errors import UnknownSourceError


def test_catalog_has_18_rows_in_table_order():
    rows = catalog.source_catalog()
    assert len(rows) == 18
    assert [d.source_id for d in rows] == [row[0] for row in TABLE_ROWS]


def test_catalog_matches_hand_transcribed_fixture_exactly():
    for descriptor, (source_id, categories, permission) in zip(
        catalog.source_catalog(), TABLE_ROWS
    ):
        assert descriptor.source_id == source_id
        assert {c.value for c in descriptor.categories} == categories
        assert permission_as_tuple(descriptor.permission) == permission


def test_catalog_is_stable_across_calls():
    assert catalog.source_catalog() == catalog.source_catalog()


def test_first_row_is_location_with_required_permission():
    first = catalog.source_catalog()[0]
    assert first.source_id == "location"
    assert first.permission == Required(PermissionKind.LOCATION)


def test_notifications_is_the_only_two_category_source():
    for descriptor in catalog.source_catalog():
        expected = 2 if descriptor.source_id == "notifications_metadata" else 1
        assert len(descriptor.categories) == expected
    assert catalog.categories_of("notifications_metadata") == frozenset(
        {Category.CORE_FUNCTIONS, Category.APPS}
    )


def test_categories_of_known_sources():
    assert catalog.categories_of("steps") == frozenset({Category.PHYSICAL})
    assert catalog.categories_of("wifi") == frozenset({Category.DEVICE})


def test_categories_of_unknown_source_raises():
    with pytest.raises(UnknownSourceError):
        catalog.categories_of("jetpack")


def test_required_permissions_appear_exactly_where_expected():
    required = {
        d.source_id for d in catalog.source_catalog() if isinstance(d.permission, Required)
    }
    assert required == {
        "location",
        "ambient_noise",
        "calls_metadata",
        "photos_metadata",
        "notifications_metadata",
        "app_usage",
        "app_traffic",
    }


def test_conditional_permissions_appear_exactly_where_expected():
    conditional = {
        d.source_id for d in catalog.source_catalog() if isinstance(d.permission, Conditional)
    }
    assert conditional == {"weather", "music_metadata"}


def test_weather_depends_on_location():
    permission = catalog.permission_requirement("weather")
    assert isinstance(permission, Conditional)
    assert permission.depends_on == "location"


def test_permission_requirement_examples():
    assert catalog.permission_requirement("accelerometer") == NotRequired()
    assert catalog.permission_requirement("app_traffic") == Required(PermissionKind.APP_USAGE)
    with pytest.raises(UnknownSourceError):
        catalog.permission_requirement("tea_leaves")


def test_conditional_dependency_chains_terminate():
    for descriptor in catalog.source_catalog():
        permission = descriptor.permission
        seen = {descriptor.source_id}
        while isinstance(permission, Conditional):
            assert permission.depends_on not in seen, "dependency cycle"
            seen.add(permission.depends_on)
            permission = catalog.permission_requirement(permission.depends_on)


def test_schema_field_names_unique_and_categories_nonempty():
    for descriptor in catalog.source_catalog():
        names = [f.name for f in descriptor.payload_schema]
        assert len(names) == len(set(names))
        assert descriptor.categories


def test_sensitivity_assignments():
    by_id = {d.source_id: d for d in catalog.source_catalog()}

    def sensitivity(source_id, field):
        return by_id[source_id].schema_field(field).sensitivity

    assert sensitivity("calls_metadata", "peer_number") is Sensitivity.PSEUDONYMIZE
    assert sensitivity("wifi", "ssid") is Sensitivity.PSEUDONYMIZE
    assert sensitivity("wifi", "bssid") is Sensitivity.PSEUDONYMIZE
    assert sensitivity("bluetooth", "peer_mac") is Sensitivity.PSEUDONYMIZE
    assert sensitivity("notifications_metadata", "content") is Sensitivity.DROP
    assert sensitivity("notifications_metadata", "app_package") is Sensitivity.CLEAR
    assert sensitivity("music_metadata", "title") is Sensitivity.CLEAR
    assert sensitivity("photos_metadata", "width") is Sensitivity.CLEAR


# -- event validation -------------------------------------------------


def _event(source_id="steps", payload=None, **kwargs) -> ContextEvent:
    return ContextEvent(
        device_pseudonym="ab" * 16,
        source_id=source_id,
        timestamp_ms=1_767_571_200_000,
        payload={"count": 4200} if payload is None else payload,
        **kwargs,
    )


def test_validate_ok_for_matching_payload():
    assert validate_event(_event()).ok


def test_validate_kind_mismatch():
    result = validate_event(_event(payload={"count": "many"}))
    assert not result.ok
    assert any(v.field == "count" for v in result.violations)


def test_validate_unknown_source():
    result = validate_event(_event(source_id="tea_leaves", payload={}))
    assert not result.ok
    assert any("unknown source" in v.reason for v in result.violations)


def test_validate_unknown_field():
    result = validate_event(_event(payload={"count": 1, "stride": 2}))
    assert not result.ok
    assert any(v.field == "stride" for v in result.violations)


def test_validate_subset_payload_is_ok():
    result = validate_event(_event(source_id="calls_metadata", payload={"direction": "incoming"}))
    assert result.ok


def test_validate_rejects_future_schema_version():
    result = validate_event(_event(schema_version=SCHEMA_VERSION + 1))
    assert not result.ok
    assert any(v.field == "schema_version" for v in result.violations)


def test_validate_rejects_bad_timestamps():
    for bad in (-5, 10**18, True):
        event = ContextEvent(
            device_pseudonym="", source_id="steps", timestamp_ms=bad, payload={"count": 1}
        )
        assert not validate_event(event).ok


def test_validate_bool_is_not_integer():
    result = validate_event(_event(payload={"count": True}))
    assert not result.ok


def test_validate_integer_accepted_for_real_field():
    result = validate_event(_event(source_id="ambient_light", payload={"lux": 12}))
    assert result.ok


def test_validate_is_pure():
    event = _event(payload={"count": "many"})
    assert validate_event(event) == validate_event(event)


def test_manifest_round_trips_as_json_lines():
    lines = catalog.catalog_manifest().strip().split("\n")
    assert len(lines) == 18
    parsed = [json.loads(line) for line in lines]
    assert [row["source_id"] for row in parsed] == [row[0] for row in TABLE_ROWS]
    for row in parsed:
        assert set(row) == {"source_id", "categories", "permission", "fields"}
