from __future__ import annotations

import itertools
import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotgov.errors import (
    NonInvertibleTransform,
    UnitMismatch,
    UnknownConcept,
    UnmappedSignal,
    UnparseableTimestamp,
    UnsupportedConversion,
)
from iotgov.mapping import (
    UNITS,
    CanonicalBaseline,
    RawSignal,
    ReorderWindow,
    apply_mapping,
    convert_unit,
    epoch_to_iso,
    load_mapping_set,
    normalize_timestamp,
    to_epoch,
    with_lineage,
)
from iotgov.sim import FleetSpec, Scenario, run_scenario

PLC_DOC = {
    "version": "1.2.0",
    "mappings": [
        {
            "id": "plc7-tt101",
            "signal": "PLC7.TT101",
            "target": "Measurement.Temperature",
            "source_unit": "degF",
            "timestamp": {"format": "iso", "offset": "+02:00", "max_skew_s": 2},
        },
        {
            "id": "plc7-state",
            "signal": "PLC7.ST1",
            "target": "Measurement.Status",
            "transform": {"type": "table", "table": {"RUN": 1, "STOP": 0}},
        },
    ],
}

# published factors, independent of the module's own derivation
PSI_IN_KPA = 6.894757293168361
AFFINE_PAIRS = [(a, b) for a, b in itertools.permutations(UNITS, 2) if UNITS[a][0] == UNITS[b][0]]


def test_load_fahrenheit_mapping():
    ms = load_mapping_set(json.dumps(PLC_DOC))
    spec = ms.for_signal("PLC7.TT101")
    assert ms.version == "1.2.0"
    assert spec.tag == "plc7-tt101@1.2.0" and spec.max_skew_s == 2.0
    assert load_mapping_set(ms.dumps()).to_dict() == ms.to_dict()


@pytest.mark.parametrize(
    "item, exc",
    [
        ({"signal": "x", "target": "Measurement.Unknown"}, UnknownConcept),
        ({"signal": "x", "target": "Measurement.Temperature", "transform": {"a": 0}}, NonInvertibleTransform),
        ({"signal": "x", "target": "Measurement.Temperature", "source_unit": "psi"}, UnsupportedConversion),
        ({"signal": "x", "target": "Measurement.Status", "transform": {"type": "table", "table": {"A": 1, "B": 1}}}, NonInvertibleTransform),
        ({"signal": "x", "target": "Measurement.Status", "transform": {"type": "spline"}}, NonInvertibleTransform),
    ],
)
def test_load_rejects(item, exc):
    with pytest.raises(exc):
        load_mapping_set({"version": "1.0.0", "mappings": [item]})


def test_extensions_add_but_never_shadow():
    base = CanonicalBaseline()
    base.extend("thermal", "Measurement.Temperature.Surface", "degC")
    assert base.unit("Measurement.Temperature.Surface") == "degC"
    with pytest.raises(UnknownConcept):
        base.extend("thermal", "Measurement.Temperature", "K")
    with pytest.raises(UnknownConcept):
        base.extend("thermal", "Recipe.Step")
    with pytest.raises(UnknownConcept):
        base.unit("Nope")
    doc = {"mappings": [{"signal": "s", "target": "Measurement.Temperature.Surface", "source_unit": "K"}]}
    assert "s" in load_mapping_set(doc, base)


def test_apply_fahrenheit_and_idempotence():
    ms = load_mapping_set(PLC_DOC)
    spec = ms.for_signal("PLC7.TT101")
    raw = RawSignal("PLC7.TT101", 212.0, "degF", "2024-05-01T12:00:00", "dev-1", "tt-1")
    once = apply_mapping(raw, spec)
    assert once.value == pytest.approx(100.0, abs=1e-12) and once.unit == "degC"
    assert once.lineage == ("plc7-tt101@1.2.0",)
    assert once.event_time == to_epoch("2024-05-01T10:00:00Z")
    assert apply_mapping(once, spec) == once
    assert with_lineage(once, spec.tag) == once


def test_apply_table_transform():
    spec = load_mapping_set(PLC_DOC).for_signal("PLC7.ST1")
    m = apply_mapping(RawSignal("PLC7.ST1", "STOP", None, 0, None), spec, event_time=5.0)
    assert m.value == 0 and m.unit is None and m.event_time == 5.0
    assert spec.transform.invert(0.0) == "STOP"
    with pytest.raises(UnmappedSignal):
        apply_mapping(RawSignal("PLC7.ST1", "IDLE", None, 0, None), spec, event_time=5.0)


def test_apply_errors():
    ms = load_mapping_set(PLC_DOC)
    spec = ms.for_signal("PLC7.TT101")
    with pytest.raises(UnmappedSignal):
        ms.for_signal("PLC9.XX")
    with pytest.raises(UnmappedSignal):
        apply_mapping(RawSignal("PLC7.ST1", 1, None, 0), spec)
    with pytest.raises(UnitMismatch):
        apply_mapping(RawSignal("PLC7.TT101", 20.0, "degC", "2024-05-01T12:00:00"), spec)
    other = load_mapping_set({"version": "2.0.0", "mappings": [dict(PLC_DOC["mappings"][0])]}).for_signal("PLC7.TT101")
    once = apply_mapping(RawSignal("PLC7.TT101", 50.0, "degF", "2024-05-01T12:00:00"), spec)
    with pytest.raises(UnitMismatch):
        apply_mapping(once, other)


def test_unit_examples():
    assert convert_unit(0.0, "degC", "degF") == pytest.approx(32.0, abs=1e-12)
    assert convert_unit(100.0, "kPa", "psi") == pytest.approx(100.0 / PSI_IN_KPA, rel=1e-12)
    assert convert_unit(1.0, "psi", "kPa") == pytest.approx(6.894757, rel=1e-7)
    assert convert_unit(1500.0, "ms", "s") == pytest.approx(1.5)
    assert convert_unit(0.0, "K", "degC") == pytest.approx(-273.15)
    with pytest.raises(UnsupportedConversion):
        convert_unit(1.0, "degC", "psi")
    with pytest.raises(UnsupportedConversion):
        convert_unit(1.0, "furlong", "m")


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(AFFINE_PAIRS), st.floats(-1e6, 1e6, allow_nan=False).filter(lambda x: abs(x) > 1e-3))
def test_unit_round_trip(pair, x):
    a, b = pair
    back = convert_unit(convert_unit(x, a, b), b, a)
    assert math.isclose(back, x, rel_tol=1e-9)


def test_timestamp_examples():
    local = to_epoch("2024-05-01T12:00:00", offset="+02:00")
    assert local == to_epoch("2024-05-01T10:00:00Z")
    assert to_epoch(1_700_000_000_500, "epoch_ms") == 1_700_000_000.5
    assert epoch_to_iso(to_epoch("2024-05-01T10:00:00Z")) == "2024-05-01T10:00:00Z"
    v = normalize_timestamp("2024-05-01T10:05:00Z", None, 60, to_epoch("2024-05-01T10:00:00Z"))
    assert v.drift_s == 300 and v.violation and v.severe
    same = normalize_timestamp("2024-05-01T10:00:00Z", None, 60, to_epoch("2024-05-01T10:00:00Z"))
    assert not same.violation and same.drift_s == 0


@pytest.mark.parametrize("raw, fmt, offset", [("yesterday", "iso", None), (None, "iso", None), ("12", "epoch_ms", None),
                                              (True, "epoch_s", None), ("2024-05-01T10:00:00", "iso", "+2h"), (5, "rfc", None)])
def test_unparseable_timestamps(raw, fmt, offset):
    with pytest.raises(UnparseableTimestamp):
        to_epoch(raw, fmt, offset)


def test_reorder_window():
    w = ReorderWindow(10.0)
    assert [w.observe("d", t) for t in (100, 95, 101, 91, 80)] == ["in_order", "reordered", "in_order", "reordered", "late"]
    assert w.observe("other", 0) == "in_order"
    assert (w.reordered, w.late) == (2, 1)


def test_idempotent_on_simulator_messages():
    sc = Scenario(seed=3, duration_s=30, fleet=FleetSpec(sites=2, lines_per_site=1, assets_per_line=2))
    result = run_scenario(sc, keep_messages=True)
    mappings = result.fleet.mappings
    checked = 0
    for msg in result.messages:
        spec = mappings.for_signal(msg.signal)
        raw = RawSignal(msg.signal, msg.payload[spec.value_field], spec.source_unit, msg.timestamp, msg.device_id)
        once = apply_mapping(raw, spec, mappings.baseline)
        assert apply_mapping(once, spec, mappings.baseline) == once
        assert once.lineage
        checked += 1
    assert checked == result.produced > 0
