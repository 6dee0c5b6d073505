from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotgov.errors import AccessDenied, BudgetExhausted, EmptyInput, UnknownJurisdiction, UnknownScope
from iotgov.privacy import (
    PartitionStore,
    PrivacyBudget,
    TokenVault,
    aggregate_records,
    dp_query,
    laplace_noise,
    region_of,
    residency_restricted,
    route_partition,
)


def allow_stewards(requester, scope):
    return requester.get("role") == "steward"


def test_tokenize_is_stable_per_scope():
    v = TokenVault(authorizer=allow_stewards)
    v.create_scope("a")
    v.create_scope("b")
    t1 = v.tokenize("op-7", "a")
    assert t1 == v.tokenize("op-7", "a") and t1 != v.tokenize("op-7", "b")
    assert "op-7" not in t1
    assert v.detokenize(t1, "a", {"role": "steward"}) == "op-7"
    with pytest.raises(AccessDenied):
        v.detokenize(t1, "a", {"role": "analyst"})
    with pytest.raises(AccessDenied):
        v.detokenize("tok_unknown", "a", {"role": "steward"})
    with pytest.raises(UnknownScope):
        v.tokenize("x", "missing")


def test_vault_without_authorizer_denies():
    v = TokenVault()
    v.create_scope("a")
    with pytest.raises(AccessDenied):
        v.detokenize(v.tokenize(1, "a"), "a", {"role": "steward"})


@settings(max_examples=100, deadline=None)
@given(st.lists(st.one_of(st.text(max_size=8), st.integers(), st.floats(allow_nan=False)), max_size=40))
def test_vault_is_a_bijection(values):
    v = TokenVault(authorizer=allow_stewards)
    v.create_scope("s")
    tokens = [v.tokenize(x, "s") for x in values]
    assert v.is_bijective("s")
    assert len(set(tokens)) == v.size("s")
    for x, t in zip(values, tokens):
        back = v.detokenize(t, "s", {"role": "steward"})
        assert back == x or (isinstance(x, float) and back == x)


def rows(groups: dict[str, int], per_sensor: int = 1):
    out = []
    for g, sensors in groups.items():
        for s in range(sensors):
            for i in range(per_sensor):
                out.append({"line": g, "sensor": f"{g}-s{s}", "value": float(s + i)})
    return out


def test_k_suppression():
    res = aggregate_records(rows({"l1": 6, "l2": 4, "l3": 5}), "line", k=5)
    assert [g.key for g in res.groups] == ["l1", "l3"] and res.suppressed == 1
    assert all(g.members >= 5 for g in res.groups)


def test_repeated_samples_do_not_lift_a_small_group():
    res = aggregate_records(rows({"l1": 3}, per_sensor=10), "line", k=5)
    assert res.groups == () and res.suppressed == 1


def test_aggregate_values_and_defaults():
    res = aggregate_records([{"line": "x", "sensor": i, "value": v} for i, v in enumerate([1, 2, 3, 4, 10])], "line")
    (g,) = res.groups
    assert (res.k, g.count, g.mean, g.min, g.max) == (5, 5, 4.0, 1.0, 10.0)
    assert aggregate_records(rows({"l1": 5}), "line", classification="Restricted").groups == ()
    assert len(aggregate_records(rows({"l1": 1}), "line", classification="Public").groups) == 1
    nested = aggregate_records([{"lineage": {"site": "s1"}, "sensor": 1, "value": 1.0}], "site", k=1)
    assert nested.groups[0].key == "s1"


def test_aggregate_errors():
    with pytest.raises(EmptyInput):
        aggregate_records([], "line")
    with pytest.raises(ValueError):
        aggregate_records(rows({"l": 1}), "galaxy")
    with pytest.raises(ValueError):
        aggregate_records([{"value": 1.0}], "line")


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.sampled_from(list("abcdefg")), st.integers(1, 9), min_size=1), st.integers(1, 8))
def test_no_released_group_below_k(groups, k):
    res = aggregate_records(rows(groups, 2), "line", k=k)
    assert all(g.members >= k for g in res.groups)
    assert len(res.groups) + res.suppressed == len(groups)
    assert {g.key for g in res.groups} == {g for g, n in groups.items() if n >= k}


def test_budget_is_exact():
    b = PrivacyBudget("p", "1.0")
    for _ in range(10):
        b.charge(0.1)
    assert b.spent == Fraction(1) and b.remaining == 0
    with pytest.raises(BudgetExhausted):
        b.charge("0.000001")
    assert PrivacyBudget.from_dict(b.to_dict()).spent == Fraction(1)


def test_budget_examples():
    b = PrivacyBudget("p", Fraction(1))
    rng = np.random.default_rng(0)
    dp_query(10.0, 1.0, 0.5, b, rng)
    assert b.remaining == Fraction(1, 2)
    with pytest.raises(BudgetExhausted):
        dp_query(10.0, 1.0, 0.6, b, rng)
    assert len(b.ledger) == 1
    with pytest.raises(ValueError):
        b.charge(0)
    with pytest.raises(ValueError):
        dp_query(1.0, -1.0, 0.1, b, rng)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.sampled_from(["0.1", "0.05", "0.25", "0.3", "1/3", "0.2"]), max_size=30))
def test_budget_never_overspent(charges):
    b = PrivacyBudget("p", "1")
    accepted = Fraction(0)
    for c in charges:
        eps = Fraction(c)
        try:
            b.charge(eps)
            accepted += eps
        except BudgetExhausted:
            assert accepted + eps > 1
        assert b.spent == accepted <= b.total


def test_dp_query_deterministic_under_seed():
    a = dp_query(5.0, 1.0, 0.1, PrivacyBudget("p", 1), np.random.default_rng(7))
    b = dp_query(5.0, 1.0, 0.1, PrivacyBudget("p", 1), np.random.default_rng(7))
    assert a == b != 5.0
    assert dp_query(5.0, 0.0, 0.1, PrivacyBudget("p", 1), np.random.default_rng(7)) == 5.0


@pytest.mark.parametrize("sensitivity, epsilon", [(1.0, 0.5), (2.0, 1.0), (1.0, 0.1)])
def test_laplace_moments(sensitivity, epsilon):
    n = 10_000
    draws = laplace_noise(sensitivity, epsilon, n, np.random.default_rng(123))
    b = sensitivity / epsilon
    sigma = np.sqrt(2) * b
    assert abs(draws.mean()) <= 3 * sigma / np.sqrt(n)
    assert abs(draws.var() - 2 * b * b) <= 0.10 * 2 * b * b
    with pytest.raises(ValueError):
        laplace_noise(1.0, 0.0, 1, np.random.default_rng(0))


def test_regions():
    assert region_of("DE") == region_of("fr") == "EU"
    assert route_partition({}, {"jurisdiction": "US"}) == "US"
    for bad in (None, "", "XX"):
        with pytest.raises(UnknownJurisdiction):
            region_of(bad)
    assert residency_restricted("Restricted", {})
    assert residency_restricted("Internal", {"data_residency": "in-region"})
    assert not residency_restricted("Internal", {"data_residency": "global"})


def test_partition_store_keeps_payloads_home(tmp_path):
    store = PartitionStore(tmp_path)
    store.place("m1", {"v": 1}, "EU", True, {"contract": "c"})
    store.place("m2", {"v": 2}, "US", False)
    store.place("m3", {"v": 3}, "JP", True)
    assert store.fetch("m1", "EU") == {"v": 1}
    with pytest.raises(AccessDenied):
        store.fetch("m1", "US")
    assert {e["id"] for e in store.catalog["CN"]} == {"m1", "m2", "m3"}
    assert {e["id"] for e in store.catalog["JP"]} >= {"m1", "m2", "m3"}
    assert store.misplaced_restricted() == 0
    assert (tmp_path / "EU.jsonl").read_text().count("\n") == 1
    with pytest.raises(KeyError):
        store.fetch("nope", "EU")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["DE", "US", "CN", "FR", "JP"]), st.booleans()), max_size=40))
def test_no_cross_region_restricted_placement(items):
    store = PartitionStore()
    for i, (j, restricted) in enumerate(items):
        store.place(f"m{i}", {"i": i}, region_of(j), restricted)
    assert store.misplaced_restricted() == 0
    for region, payloads in store.payloads.items():
        assert all(p["home"] == region for p in payloads)
    catalogs = {tuple(e["id"] for e in c) for c in store.catalog.values()}
    assert len(catalogs) <= 1 or not items

