from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_contract
from iotgov.contracts import Ownership, Steward
from iotgov.errors import BadWeights, EmptyWindow, MalformedContract, MissingSla, UnknownIssueClass
from iotgov.quality import (
    DEFAULT_WEIGHTS,
    DIMENSIONS,
    Issue,
    Observation,
    QualityMonitor,
    composite_score,
    compute_dimension_scores,
    evaluate_sla,
    governance_report,
    remediate,
)

C = make_contract()


def obs(t, key="d1", value=50.0, arrival=None, **kw):
    return Observation(key, t, t if arrival is None else arrival, value, **kw)


def test_completeness_examples():
    ninety = [obs(float(t)) for t in range(90)]
    dims, info = compute_dimension_scores(ninety, C, (0.0, 100.0), expected_keys=["d1"])
    assert dims["completeness"] == pytest.approx(0.90) and info["expected"] == 100
    dup = [obs(float(t)) for t in range(95)] + [obs(float(t) + 0.5) for t in range(5)]
    dims, _ = compute_dimension_scores(dup, C, (0.0, 100.0), expected_keys=["d1"])
    assert dims["completeness"] == pytest.approx(0.95)


def test_other_dimension_examples():
    rows = [obs(float(t), arrival=t + (10 if t % 10 == 0 else 1)) for t in range(100)]
    dims, _ = compute_dimension_scores(rows, C, (0.0, 100.0), value_field="value")
    assert dims["accuracy"] == 1.0 and dims["freshness"] == pytest.approx(0.90)
    rows = [obs(float(t), value=200.0 if t < 25 else 10.0, valid=t >= 10, consistent=t % 2 == 0) for t in range(100)]
    dims, _ = compute_dimension_scores(rows, C, (0.0, 100.0), value_field="value")
    assert (dims["accuracy"], dims["validity"], dims["consistency"]) == (0.75, 0.90, 0.50)


def test_truth_accuracy_mode():
    c = make_contract()
    c = type(c)(**{**c.__dict__, "quality_sla": type(c.quality_sla)(**{**c.quality_sla.__dict__, "max_deviation": 0.5})})
    rows = [obs(0.0, value=10.0, true_value=10.4), obs(1.0, value=10.0, true_value=11.0)]
    dims, info = compute_dimension_scores(rows, c, (0.0, 2.0), accuracy_mode="truth")
    assert dims["accuracy"] == 0.5 and info["accuracy_mode"] == "truth"


def test_empty_window():
    with pytest.raises(EmptyWindow):
        compute_dimension_scores([], C, (0.0, 10.0))
    dims, _ = compute_dimension_scores([], C, (0.0, 10.0), expected_keys=["d1"])
    assert dims["completeness"] == 0.0


def test_composite():
    ones = {d: 1.0 for d in DIMENSIONS}
    assert composite_score(ones) == 1.0
    eq = {d: 0.2 for d in DIMENSIONS}
    assert composite_score({**ones, "validity": 0.0}, eq) == pytest.approx(0.8)
    with pytest.raises(BadWeights):
        composite_score(ones, {d: 0.18 for d in DIMENSIONS})
    with pytest.raises(BadWeights):
        composite_score(ones, {**DEFAULT_WEIGHTS, "completeness": -0.3, "accuracy": 0.8})
    with pytest.raises(BadWeights):
        QualityMonitor(weights={"completeness": 0.5})


def test_sla_breach_routed_to_responsible():
    scores = {"completeness": 0.90, "consistency": 1.0, "validity": 1.0, "freshness": 1.0, "accuracy": 1.0}
    breaches, alerts = evaluate_sla(C, scores, detected_at=42.0)
    assert [(b.dimension, b.routed_to, b.threshold) for b in breaches] == [("completeness", "alice", 0.95)]
    assert alerts[0]["to"] == "alice" and set(alerts[0]["cc"]) == {"bob", "ops"}
    assert breaches[0].raci["Accountable"] == ["bob"]


def test_sla_threshold_passes_at_equality():
    at = {"completeness": 0.95, "consistency": 0.9, "validity": 0.9, "freshness": 1.0, "accuracy": 1.0}
    assert evaluate_sla(C, at) == ([], [])


def test_sla_errors():
    with pytest.raises(MissingSla):
        evaluate_sla(make_contract(sla=False), {})
    with pytest.raises(MalformedContract):
        type(C)(**{**C.__dict__, "ownership": Ownership("thermal", "x", (Steward("bob", "Accountable"),))})


def test_remediation_classes():
    out = remediate(Issue("missing_sample", "s", data=[(0.0, 1.0), (1.0, None), (2.0, 3.0)]))
    assert out.issue_class == "Automated" and out.derived[1] == (1.0, 2.0)
    assert out.original[1] == (1.0, None) and out.lineage and "interpolated" in out.lineage[0]
    semi = remediate(Issue("sustained_completeness", "s"))
    assert semi.issue_class == "SemiAutomated" and semi.work_item["suggested_diagnostics"]
    manual = remediate(Issue("consistency_break", "s"))
    assert manual.work_item["status"] == "open" and "root_cause" in manual.work_item
    with pytest.raises(UnknownIssueClass):
        remediate(Issue("gremlins", "s"))
    with pytest.raises(UnknownIssueClass):
        remediate(Issue("outlier", "s", issue_class="Magic"))


def test_other_automated_fixes():
    dup = remediate(Issue("duplicate", "s", data=[(0.0, 1.0), (0.0, 1.0), (1.0, 2.0)]))
    assert dup.derived == [(0.0, 1.0), (1.0, 2.0)]
    series = [(float(t), 10.0 + 0.1 * (t % 3)) for t in range(20)] + [(20.0, 500.0)]
    out = remediate(Issue("outlier", "s", data=series))
    assert out.derived[-1] == (20.0, None) and sum(v is None for _, v in out.derived) == 1
    skew = remediate(Issue("timestamp_skew", "s", data=[(10.0, 1.0)]), offset=3.0)
    assert skew.derived == [(7.0, 1.0)]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 59), st.floats(0, 0.99)), max_size=80))
def test_remediation_keeps_raw_count(slots):
    series = [(s + frac, None if i % 7 == 0 else float(i)) for i, (s, frac) in enumerate(slots)]
    for kind in ("missing_sample", "outlier", "timestamp_skew"):
        out = remediate(Issue(kind, "s", data=series))
        assert out.original == series and len(out.derived) == len(series)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.tuples(st.sampled_from(["a", "b", "c"]), st.floats(0, 29.999), st.booleans(), st.booleans()), max_size=60),
    st.sampled_from([0.5, 1.0, 2.0]),
)
def test_scores_match_brute_force(records, rate):
    c = make_contract(rate=rate)
    rows = [Observation(k, t, t + (6 if late else 0), 50.0, valid=ok) for k, t, ok, late in records]
    keys = ["a", "b", "c"]
    window = (0.0, 30.0)
    try:
        dims, _ = compute_dimension_scores(rows, c, window, expected_keys=keys)
    except EmptyWindow:
        assert not rows
        return
    slots = int(30 * rate)
    grid = {(k, s) for k in keys for s in range(slots)}
    filled = {(k, s) for k in keys for s in range(slots) for kk, t, _, _ in records if kk == k and s / rate <= t < (s + 1) / rate}
    assert dims["completeness"] == pytest.approx(len(filled & grid) / len(grid))
    if records:
        assert dims["validity"] == pytest.approx(sum(ok for _, _, ok, _ in records) / len(records))
        assert dims["freshness"] == pytest.approx(sum(not late for *_, late in records) / len(records))
    assert all(0.0 <= v <= 1.0 for v in dims.values())


def test_full_sample_equals_exhaustive():
    rng = np.random.default_rng(4)
    rows = [obs(float(t), value=float(rng.normal(50, 60))) for t in range(600) if rng.random() > 0.1]
    exhaustive, _ = compute_dimension_scores(rows, C, (0.0, 600.0), value_field="value", expected_keys=["d1"])
    sampled, _ = compute_dimension_scores(rows, C, (0.0, 600.0), value_field="value", expected_keys=["d1"],
                                          sample_fraction=1.0, rng=np.random.default_rng(9))
    assert sampled == exhaustive


def test_sampling_error_within_tolerance_most_trials():
    # f=0.2 needs a few thousand slots before +-0.03 covers 95% of draws at p~0.85
    rng = np.random.default_rng(21)
    keys = [f"d{i}" for i in range(5)]
    rows = [obs(float(t), key=k, value=float(rng.normal(100, 40))) for k in keys for t in range(600) if rng.random() > 0.15]
    exact, _ = compute_dimension_scores(rows, C, (0.0, 600.0), value_field="value", expected_keys=keys)
    ok = {"completeness": 0, "accuracy": 0}
    trials = 200
    for seed in range(trials):
        got, _ = compute_dimension_scores(rows, C, (0.0, 600.0), value_field="value", expected_keys=keys,
                                          sample_fraction=0.2, rng=np.random.default_rng(seed))
        for d in ok:
            ok[d] += abs(got[d] - exact[d]) <= 0.03
    assert all(v / trials >= 0.95 for v in ok.values()), ok


def test_monitor_windows_and_breach_lifecycle():
    mon = QualityMonitor(window_s=10.0)
    mon.watch("line-temp", C, ["d1"], "value")
    for t in range(10):
        mon.observe("line-temp", obs(float(t)))
    for t in range(10, 20, 2):  # half missing
        mon.observe("line-temp", obs(float(t)))
    for t in range(20, 30):
        mon.observe("line-temp", obs(float(t)))
    closed = mon.advance(30.0)
    assert [s.window for s in closed] == [(0.0, 10.0), (10.0, 20.0), (20.0, 30.0)]
    assert [s.dimensions["completeness"] for s in closed] == [1.0, 0.5, 1.0]
    (breach,) = mon.breaches
    assert (breach.detected_at, breach.resolved_at, breach.routed_to) == (20.0, 30.0, "alice")
    assert mon.adherence() == pytest.approx(2 / 3)
    assert mon.advance(30.0) == []


def test_governance_report_examples():
    class Rec:
        def __init__(self, outcome, timestamp=1.0):
            self.outcome, self.timestamp = outcome, timestamp

    rep = governance_report(audit_records=[Rec("Deny")] * 2 + [Rec("Allow")] * 8 + [Rec("Accept")],
                            detections=[(0.0, 30.0)], severities={"Critical": 3, "Warning": 1}, messages=10,
                            streams_total=4, streams_governed=3)
    assert rep["mttd_s"] == 30.0
    assert rep["decision_distribution"] == {"Allow": 0.8, "Deny": 0.2, "Escalate": 0.0}
    assert rep["validation_failure_rates"] == {"Critical": 0.3, "Warning": 0.1, "Informational": 0.0}
    assert rep["sla_adherence"] == 1.0 and rep["contract_coverage"] == 0.75 and rep["mttr_s"] is None
    windowed = governance_report(window=(100.0, 200.0), audit_records=[Rec("Deny")], detections=[(0.0, 30.0)])
    assert windowed["mttd_s"] is None and windowed["decisions"] == {}
    assert not math.isnan(governance_report(decision_latencies=[0.1, 0.3])["decision_latency_mean_s"])


def test_interpolation_between_same_instant_neighbours():
    out = remediate(Issue("missing_sample", "s", data=[(1.0, 2.0), (1.0, None), (1.0, 4.0)]))
    assert out.derived == [(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)]
