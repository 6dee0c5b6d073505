from __future__ import annotations

from datetime import date
from pathlib import Path as FsPath

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotgov.errors import BadDuration, PolicySyntaxError, UnknownAttributeRoot
from iotgov.policy import format_policy, parse_expr, parse_policy, parse_rule
from iotgov.policy.ast import (
    AGGREGATION_LEVELS,
    CATEGORIES,
    COMPARATORS,
    DURATION_SECONDS,
    LAYERS,
    ROOTS,
    Aggregate,
    AgeCompare,
    And,
    Compare,
    Duration,
    InSet,
    Lit,
    Mask,
    Not,
    Or,
    Path,
    Policy,
    Retain,
    Rule,
)

CORPUS = sorted((FsPath(__file__).parent / "fixtures" / "policies").glob("*.policy"))

ACCESS_RULE = 'permit when subject.role == "Analyst" and subject.jurisdiction == asset.jurisdiction and subject.mfa == true'
RETENTION_RULE = 'retain 10y when asset.site.jurisdiction == "EU" and resource.category == "quality-inspection"'


def test_access_example_parses():
    rule = parse_rule(ACCESS_RULE)
    assert rule.effect == "permit"
    assert isinstance(rule.when, And) and len(rule.when.items) == 3
    middle = rule.when.items[1]
    assert middle == Compare(Path("subject", ("jurisdiction",)), "==", Path("asset", ("jurisdiction",)))
    assert rule.when.items[2].right == Lit("bool", True)


def test_retention_example_parses():
    rule = parse_rule(RETENTION_RULE)
    assert rule.effect == "retain"
    assert rule.retention == Retain(Duration(10, "y"))
    assert rule.when.items[0].left == Path("asset", ("site", "jurisdiction"))


def test_unknown_root():
    with pytest.raises(UnknownAttributeRoot):
        parse_rule("permit when frob.x == 1")


def test_bad_duration():
    with pytest.raises(BadDuration):
        parse_rule("retain 10q when resource.x == 1")


def test_syntax_error_position():
    text = "policy p layer Enterprise category Access version 1.0.0\n  permit when subject.role == \n"
    with pytest.raises(PolicySyntaxError) as info:
        parse_policy(text)
    assert (info.value.line, info.value.column) == (3, 1)
    with pytest.raises(PolicySyntaxError) as info:
        parse_policy("policy p layer Enterprise category Access version 1.0.0\n  permit when subject.role = 1\n")
    assert (info.value.line, info.value.column) == (2, 28)
    with pytest.raises(PolicySyntaxError):
        parse_policy("policy p layer Galaxy category Access version 1.0.0\n permit when subject.a == 1")
    with pytest.raises(PolicySyntaxError):
        parse_policy("policy p layer Enterprise category Access version 1.0.0 effective 2024-13-45\n permit when subject.a == 1")
    with pytest.raises(PolicySyntaxError):
        parse_policy("policy p layer Enterprise category Access version 1.0.0\n")


def test_precedence():
    e = parse_expr("subject.a == 1 or subject.b == 2 and not subject.c == 3")
    assert isinstance(e, Or) and isinstance(e.items[1], And) and isinstance(e.items[1].items[1], Not)


def test_obligations():
    rule = parse_rule("permit when subject.role == \"Auditor\" with mask(resource.operator.name), aggregate(line), retain 1y..5y")
    assert rule.obligations == (Mask(Path("resource", ("operator", "name"))), Aggregate("line"), Retain(Duration(1, "y"), Duration(5, "y")))


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.stem)
def test_corpus_round_trip(path):
    ast = parse_policy(path.read_text(encoding="utf-8"))
    printed = format_policy(ast)
    assert parse_policy(printed) == ast
    assert format_policy(parse_policy(printed)) == printed


# -- generated ASTs ------------------------------------------------------------------

ident = st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True)
paths = st.builds(lambda r, parts: Path(r, tuple(parts)), st.sampled_from(ROOTS), st.lists(ident, min_size=1, max_size=3))
literals = st.one_of(
    st.builds(Lit, st.just("string"), st.text(max_size=8)),
    st.builds(Lit, st.just("int"), st.integers(-10**6, 10**6)),
    st.builds(Lit, st.just("float"), st.floats(allow_nan=False, allow_infinity=False, width=64).filter(lambda f: not f.is_integer())),
    st.builds(Lit, st.just("bool"), st.booleans()),
)
durations = st.builds(Duration, st.integers(0, 1000), st.sampled_from(sorted(DURATION_SECONDS)))
atoms = st.one_of(
    st.builds(Compare, paths, st.sampled_from(COMPARATORS), st.one_of(literals, paths)),
    st.builds(lambda p, vs: InSet(p, tuple(vs)), paths, st.lists(literals, min_size=1, max_size=3)),
    st.builds(AgeCompare, st.sampled_from(COMPARATORS), durations),
)


def _extend(children):
    return st.one_of(
        st.builds(Not, children),
        st.builds(lambda xs: And(tuple(xs)), st.lists(children, min_size=2, max_size=3)),
        st.builds(lambda xs: Or(tuple(xs)), st.lists(children, min_size=2, max_size=3)),
    )


exprs = st.recursive(atoms, _extend, max_leaves=8)
retains = st.builds(
    lambda lo, hi: Retain(lo, None if hi is None else Duration(lo.amount + hi, lo.unit)),
    durations,
    st.one_of(st.none(), st.integers(0, 100)),
)
obligations = st.one_of(st.builds(Mask, paths), st.builds(Aggregate, st.sampled_from(AGGREGATION_LEVELS)), retains)


@st.composite
def rules(draw):
    effect = draw(st.sampled_from(["permit", "forbid", "escalate", "retain"]))
    retention = draw(retains) if effect == "retain" else None
    return Rule(effect, draw(exprs), tuple(draw(st.lists(obligations, max_size=3))), retention)


policies = st.builds(
    Policy,
    st.from_regex(r"[a-z][a-z0-9\-]{0,10}", fullmatch=True),
    st.sampled_from(LAYERS),
    st.sampled_from(CATEGORIES),
    st.builds(lambda a, b, c: f"{a}.{b}.{c}", st.integers(0, 20), st.integers(0, 20), st.integers(0, 20)),
    st.one_of(st.none(), st.dates(min_value=date(1000, 1, 1)).map(date.isoformat)),
    st.lists(rules(), min_size=1, max_size=4).map(tuple),
)


@settings(max_examples=300, deadline=None)
@given(policies)
def test_print_parse_identity(policy):
    assert parse_policy(format_policy(policy)) == policy
