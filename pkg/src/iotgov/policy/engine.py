"""Layered ABAC evaluation over parsed policies.

Combining algorithm, in order:

1. any matching ``forbid`` anywhere -> Deny
2. a forbid or escalate rule whose predicate cannot be decided because an
   attribute is missing -> Deny (fail-closed)
3. every layer that defines permit rules must have one that matches, and
   the enterprise layer must define one -> otherwise Deny
4. any matching ``escalate`` -> Escalate
5. Allow, carrying the union of obligations of every matched rule

Because lower layers can only add conjuncts, a request the enterprise
layer denies on its own is denied by any composition.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import Any, Iterable, Mapping, Sequence

from ..errors import ConflictUnresolvable, DomainTooLarge
from .ast import (
    LAYERS,
    AgeCompare,
    And,
    Compare,
    Expr,
    InSet,
    Not,
    Obligation,
    Or,
    Path,
    Policy,
    Retain,
    Rule,
    paths_in,
)

CLASSIFICATIONS = ("Public", "Internal", "Confidential", "Restricted")
NOTIFY_STEWARD = "notify_steward"

_MISSING = object()


@dataclass
class AttributeRequest:
    subject: dict = field(default_factory=dict)
    resource: dict = field(default_factory=dict)
    env: dict = field(default_factory=dict)
    asset: dict = field(default_factory=dict)
    action: str = "read"

    def lookup(self, path: Path) -> Any:
        node: Any = getattr(self, path.root)
        if path.root == "env" and path.parts == ("action",) and "action" not in node:
            return self.action  # the action is an environment attribute for policy purposes
        for part in path.parts:
            if not isinstance(node, Mapping) or part not in node:
                return _MISSING
            node = node[part]
        return _MISSING if node is None else node

    def age(self) -> Any:
        if "age" in self.env:
            return self.env["age"]
        now, created = self.env.get("timestamp"), self.resource.get("created_at")
        if now is None or created is None:
            return _MISSING
        return now - created

    def problems(self) -> list[str]:
        out = []
        cls = self.resource.get("classification")
        if cls is not None and cls not in CLASSIFICATIONS:
            out.append(f"classification {cls!r} outside the taxonomy")
        if self.env.get("timestamp") is None:
            out.append("env.timestamp missing")
        return out

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "resource": self.resource,
            "env": self.env,
            "asset": self.asset,
            "action": self.action,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "AttributeRequest":
        return cls(
            subject=dict(data.get("subject") or {}),
            resource=dict(data.get("resource") or {}),
            env=dict(data.get("env") or {}),
            asset=dict(data.get("asset") or {}),
            action=data.get("action", "read"),
        )


# -- predicate evaluation (three-valued) -----------------------------------------


def _kind(value: Any) -> str:
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, (int, float)):
        return "number"
    return type(value).__name__


def _compare(a: Any, op: str, b: Any) -> bool:
    if _kind(a) != _kind(b):
        return op == "!="
    if op == "==":
        return a == b
    if op == "!=":
        return a != b
    if _kind(a) not in ("number", "str"):
        return False
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


class _Eval:
    """Kleene evaluation: True, False, or None when an attribute is missing."""

    def __init__(self, request: AttributeRequest):
        self.request = request
        self.missing: set[str] = set()

    def __call__(self, expr: Expr) -> bool | None:
        if isinstance(expr, And):
            result: bool | None = True
            for item in expr.items:
                value = self(item)
                if value is False:
                    return False
                if value is None:
                    result = None
            return result
        if isinstance(expr, Or):
            result = False
            for item in expr.items:
                value = self(item)
                if value is True:
                    return True
                if value is None:
                    result = None
            return result
        if isinstance(expr, Not):
            value = self(expr.operand)
            return None if value is None else not value
        if isinstance(expr, Compare):
            left = self.value(expr.left)
            right = self.value(expr.right) if isinstance(expr.right, Path) else expr.right.value
            if left is _MISSING or right is _MISSING:
                return None
            return _compare(left, expr.op, right)
        if isinstance(expr, InSet):
            value = self.value(expr.path)
            if value is _MISSING:
                return None
            return any(_compare(value, "==", v.value) for v in expr.values)
        if isinstance(expr, AgeCompare):
            age = self.request.age()
            if age is _MISSING:
                self.missing.add("age")
                return None
            return _compare(age, expr.op, expr.duration.seconds)
        raise TypeError(expr)

    def value(self, path: Path) -> Any:
        value = self.request.lookup(path)
        if value is _MISSING:
            self.missing.add(str(path))
        return value


def evaluate_expr(expr: Expr, request: AttributeRequest) -> bool | None:
    return _Eval(request)(expr)


# -- composition --------------------------------------------------------------------


def _effective_date(policy: Policy) -> date:
    return date.fromisoformat(policy.effective) if policy.effective else date.min


def _as_date(now: float | date | datetime | None) -> date | None:
    if now is None or isinstance(now, date) and not isinstance(now, datetime):
        return now
    if isinstance(now, datetime):
        return now.date()
    return datetime.fromtimestamp(now, tz=timezone.utc).date()


def select_versions(policies: Iterable[Policy], now=None) -> list[Policy]:
    """One version per policy id: greatest effective date not after ``now``."""
    today = _as_date(now)
    chosen: dict[str, Policy] = {}
    for pol in policies:
        eff = _effective_date(pol)
        if today is not None and eff > today:
            continue
        current = chosen.get(pol.policy_id)
        if current is None or (eff, _semver(pol.version)) > (_effective_date(current), _semver(current.version)):
            chosen[pol.policy_id] = pol
    return sorted(chosen.values(), key=lambda p: p.policy_id)


def _semver(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split("."))


@dataclass(frozen=True)
class EffectivePolicy:
    """Immutable composed snapshot; evaluation never mutates it."""

    layers: tuple[tuple[str, tuple[Policy, ...]], ...]

    def policies(self, layer: str | None = None) -> list[Policy]:
        return [p for name, pols in self.layers if layer in (None, name) for p in pols]

    def rules(self, layer: str | None = None, categories: Sequence[str] | None = None):
        """(layer, rule_id, rule) triples in layer order."""
        for name, pols in self.layers:
            if layer not in (None, name):
                continue
            for pol in pols:
                if categories is not None and pol.category not in categories:
                    continue
                for rule_id, rule in pol.numbered_rules():
                    yield name, rule_id, rule


def _as_list(value) -> list[Policy]:
    if value is None:
        return []
    if isinstance(value, Policy):
        return [value]
    return list(value)


def compose_layers(enterprise, domain=None, plant=None, now=None) -> EffectivePolicy:
    layers = []
    for name, given in zip(LAYERS, (enterprise, domain, plant)):
        pols = select_versions(_as_list(given), now)
        for pol in pols:
            if pol.layer != name:
                raise ValueError(f"policy {pol.policy_id} declares layer {pol.layer}, supplied as {name}")
        _check_same_layer(name, pols)
        layers.append((name, tuple(pols)))
    return EffectivePolicy(tuple(layers))


def _check_same_layer(layer: str, policies: list[Policy]) -> None:
    permits: dict[Expr, str] = {}
    forbids: dict[Expr, str] = {}
    for pol in policies:
        for rule_id, rule in pol.numbered_rules():
            if rule.effect == "permit":
                permits.setdefault(rule.when, rule_id)
            elif rule.effect == "forbid":
                forbids.setdefault(rule.when, rule_id)
    for expr, rule_id in permits.items():
        if expr in forbids:
            raise ConflictUnresolvable(f"{layer}: {rule_id} permits and {forbids[expr]} forbids the same predicate")


# -- decisions ------------------------------------------------------------------------


@dataclass(frozen=True)
class Decision:
    outcome: str  # Allow | Deny | Escalate
    obligations: tuple[str, ...] = ()
    reasons: tuple[str, ...] = ()
    trace: tuple[str, ...] = ()
    matched: tuple[tuple[str, tuple[str, ...]], ...] = ()

    @property
    def allowed(self) -> bool:
        return self.outcome == "Allow"

    def obligation_objects(self, policy: EffectivePolicy) -> list[Obligation]:
        wanted = set(self.obligations)
        seen, out = set(), []
        for _, _, rule in policy.rules():
            for ob in rule.obligations:
                text = str(ob)
                if text in wanted and text not in seen:
                    seen.add(text)
                    out.append(ob)
        return out

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "obligations": list(self.obligations),
            "reasons": list(self.reasons),
            "trace": list(self.trace),
            "matched": {layer: list(ids) for layer, ids in self.matched},
        }


def evaluate_request(
    policy: EffectivePolicy,
    request: AttributeRequest,
    categories: Sequence[str] | None = None,
) -> Decision:
    trace: list[str] = []
    forbid_hits, escalate_hits, unknown = [], [], []
    permit_layers: dict[str, list[str]] = {}
    permit_defined: set[str] = set()
    obligations: list[str] = []
    escalate_obligations: list[str] = []
    missing_paths: set[str] = set()
    matched: dict[str, list[str]] = {}

    for layer, rule_id, rule in policy.rules(categories=categories):
        if rule.effect == "retain":
            continue
        ev = _Eval(request)
        value = ev(rule.when)
        trace.append(f"{layer} {rule_id} {rule.effect} -> {_fmt(value)}")
        if value is None:
            missing_paths |= ev.missing
        if rule.effect == "permit":
            permit_defined.add(layer)
            if value is True:
                permit_layers.setdefault(layer, []).append(rule_id)
                matched.setdefault(layer, []).append(rule_id)
                obligations.extend(str(o) for o in rule.obligations)
            elif value is None:
                unknown.append((rule_id, sorted(ev.missing)))
        elif value is True:
            matched.setdefault(layer, []).append(rule_id)
            if rule.effect == "forbid":
                forbid_hits.append(rule_id)
            else:
                escalate_hits.append(rule_id)
                escalate_obligations.extend(str(o) for o in rule.obligations)
        elif value is None:
            forbid_hits.append(f"missing-attribute:{','.join(sorted(ev.missing))}@{rule_id}")

    matched_t = tuple((layer, tuple(ids)) for layer, ids in matched.items())
    if forbid_hits:
        trace.append("forbid overrides")
        return Decision("Deny", (), tuple(forbid_hits), tuple(trace), matched_t)

    reasons = []
    required = set(permit_defined) | {"Enterprise"}
    for layer in LAYERS:
        if layer in required and layer not in permit_layers:
            reasons.append(f"no-permit:{layer}")
    if reasons:
        for rule_id, paths in unknown:
            reasons.append(f"missing-attribute:{','.join(paths)}@{rule_id}")
        trace.append("permit requirement not met")
        return Decision("Deny", (), tuple(reasons), tuple(trace), matched_t)

    if escalate_hits:
        trace.append("escalate overrides permit")
        obs = _dedupe(obligations + escalate_obligations + [NOTIFY_STEWARD])
        return Decision("Escalate", obs, tuple(escalate_hits), tuple(trace), matched_t)

    trace.append("allow")
    allowed_by = tuple(rid for layer in LAYERS for rid in permit_layers.get(layer, ()))
    return Decision("Allow", _dedupe(obligations), allowed_by, tuple(trace), matched_t)


def _fmt(value: bool | None) -> str:
    return "unknown" if value is None else str(value).lower()


def _dedupe(items: Iterable[str]) -> tuple[str, ...]:
    return tuple(dict.fromkeys(items))


# -- retention --------------------------------------------------------------------------


@dataclass(frozen=True)
class RetentionDecision:
    disposition: str  # MustRetain | MayDelete | MustDelete
    age_s: float
    minimum_s: float
    maximum_s: float | None
    delete_by: float | None
    rules: tuple[str, ...]


def retention_rules(policy: EffectivePolicy):
    for layer, rule_id, rule in policy.rules():
        if rule.effect == "retain":
            yield layer, rule_id, rule.retention, rule.when
        for ob in rule.obligations:
            if isinstance(ob, Retain):
                yield layer, rule_id, ob, rule.when


def evaluate_retention(policy: EffectivePolicy, request: AttributeRequest, now: float) -> RetentionDecision:
    """Strictest minimum and tightest maximum among the applicable retain rules."""
    created = request.resource.get("created_at")
    if created is None:
        raise ValueError("resource.created_at is required for retention")
    age = now - created
    req = AttributeRequest(request.subject, request.resource, dict(request.env, timestamp=now), request.asset, request.action)
    minimum, maximum, applied = 0.0, None, []
    for _, rule_id, retain, when in retention_rules(policy):
        if evaluate_expr(when, req) is not True:
            continue
        applied.append(rule_id)
        minimum = max(minimum, retain.minimum.seconds)
        if retain.maximum is not None:
            maximum = retain.maximum.seconds if maximum is None else min(maximum, retain.maximum.seconds)
    delete_by = created + maximum if maximum is not None else None
    if age < minimum:
        disposition = "MustRetain"
    elif maximum is not None and age >= maximum:
        disposition = "MustDelete"
    else:
        disposition = "MayDelete"
    return RetentionDecision(disposition, age, minimum, maximum, delete_by, tuple(applied))


# -- finite-domain analysis ---------------------------------------------------------------

_SENTINELS = ("␀other-a", "␀other-b")


def _literals_by_path(exprs: Iterable[Expr]):
    lits: dict[str, set] = {}
    links: list[tuple[str, str]] = []

    def walk(expr: Expr) -> None:
        if isinstance(expr, (And, Or)):
            for item in expr.items:
                walk(item)
        elif isinstance(expr, Not):
            walk(expr.operand)
        elif isinstance(expr, Compare):
            left = str(expr.left)
            lits.setdefault(left, set())
            if isinstance(expr.right, Path):
                right = str(expr.right)
                lits.setdefault(right, set())
                links.append((left, right))
            else:
                lits[left].add((expr.right.kind, expr.right.value))
        elif isinstance(expr, InSet):
            lits.setdefault(str(expr.path), set()).update((v.kind, v.value) for v in expr.values)
        elif isinstance(expr, AgeCompare):
            lits.setdefault("age", set()).add(("float", expr.duration.seconds))

    for e in exprs:
        walk(e)
    return lits, links


def derive_domains(exprs: Iterable[Expr]) -> dict[str, list]:
    """Finite value sets that realize every truth assignment the literals allow.

    Each path gets its literals, plus points between and beyond numeric
    literals, plus two fresh sentinel strings. Paths compared to each other
    share one pooled set so equal and unequal pairs both occur.
    """
    lits, links = _literals_by_path(exprs)
    parent = {p: p for p in lits}

    def find(p):
        while parent[p] != p:
            parent[p] = parent[parent[p]]
            p = parent[p]
        return p

    for a, b in links:
        parent[find(a)] = find(b)
    pooled: dict[str, set] = {}
    for p, values in lits.items():
        pooled.setdefault(find(p), set()).update(values)

    out = {}
    for p in sorted(lits):
        values = pooled[find(p)]
        candidates: list = []
        numbers = sorted({v for k, v in values if k in ("int", "float")})
        if numbers:
            candidates.append(numbers[0] - 1)
            for lo, hi in zip(numbers, numbers[1:]):
                candidates.append(lo)
                candidates.append((lo + hi) / 2)
            candidates.append(numbers[-1])
            candidates.append(numbers[-1] + 1)
        if any(k == "bool" for k, _ in values):
            candidates += [True, False]
        candidates += sorted({v for k, v in values if k == "string"})
        candidates += list(_SENTINELS)
        seen, uniq = set(), []
        for c in candidates:
            key = (type(c) is bool, c)
            if key not in seen:
                seen.add(key)
                uniq.append(c)
        out[p] = uniq
    return out


def _request_for(assignment: Mapping[str, Any]) -> AttributeRequest:
    req = AttributeRequest()
    for dotted, value in assignment.items():
        if dotted == "age":
            req.env["age"] = value
            continue
        root, *parts = dotted.split(".")
        node = getattr(req, root)
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                break
        else:
            node[parts[-1]] = value
    return req


def enumerate_requests(domains: Mapping[str, Sequence], limit: int = 200_000):
    keys = sorted(domains)
    total = 1
    for k in keys:
        total *= max(1, len(domains[k]))
    if total > limit:
        raise DomainTooLarge(f"{total} requests exceed the enumeration bound {limit}")
    for combo in itertools.product(*(domains[k] for k in keys)):
        assignment = dict(zip(keys, combo))
        yield assignment, _request_for(assignment)


@dataclass(frozen=True)
class LintViolation:
    rule_id: str
    kind: str
    detail: str
    witness: tuple[tuple[str, Any], ...] = ()


def lint_policy(policy: Policy, baseline: Iterable[Policy] | EffectivePolicy | None, limit: int = 200_000) -> list[LintViolation]:
    """Flag rules that would loosen what the layers above already impose."""
    if policy.layer == "Enterprise":
        return []
    if baseline is None:
        raise ValueError(f"{policy.layer} policy {policy.policy_id} needs an enterprise baseline to lint against")
    if isinstance(baseline, EffectivePolicy):
        base_rules = [(rid, r) for _, rid, r in baseline.rules()]
    else:
        base_rules = [pair for pol in baseline for pair in pol.numbered_rules()]
    forbids = [(rid, r) for rid, r in base_rules if r.effect == "forbid"]
    base_retains = [(rid, ret, r.when) for rid, r in base_rules for ret in _retains(r)]

    out: list[LintViolation] = []
    for rule_id, rule in policy.numbered_rules():
        if rule.effect == "permit":
            for fid, forbid in forbids:
                witness = _find_witness([rule.when, forbid.when], limit)
                if witness is not None:
                    out.append(
                        LintViolation(rule_id, "permits-forbidden", f"admits requests that {fid} forbids", witness)
                    )
        for retain in _retains(rule):
            for bid, base, when in base_retains:
                witness = _find_witness([rule.when, when], limit)
                if witness is None:
                    continue
                if retain.minimum.seconds < base.minimum.seconds:
                    out.append(
                        LintViolation(rule_id, "relaxes-retention", f"minimum {retain.minimum} below {bid}'s {base.minimum}", witness)
                    )
                if base.maximum is not None and (retain.maximum is None or retain.maximum.seconds > base.maximum.seconds):
                    out.append(
                        LintViolation(rule_id, "relaxes-retention", f"maximum exceeds {bid}'s {base.maximum}", witness)
                    )
    return out


def _retains(rule: Rule) -> list[Retain]:
    out = [rule.retention] if rule.effect == "retain" and rule.retention is not None else []
    return out + [o for o in rule.obligations if isinstance(o, Retain)]


def _find_witness(exprs: Sequence[Expr], limit: int):
    """A request satisfying every expression, or None."""
    domains = derive_domains(exprs)
    for assignment, req in enumerate_requests(domains, limit):
        if all(evaluate_expr(e, req) is True for e in exprs):
            return tuple(sorted(assignment.items()))
    return None


@dataclass(frozen=True)
class Conflict:
    layer: str
    assignment: tuple[tuple[str, Any], ...]
    permits: tuple[str, ...]
    forbids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "assignment": dict(self.assignment),
            "permits": list(self.permits),
            "forbids": list(self.forbids),
        }


def detect_conflicts(
    policies: Iterable[Policy] | EffectivePolicy,
    domains: Mapping[str, Sequence] | None = None,
    limit: int = 100_000,
) -> list[Conflict]:
    """Requests on which one layer both permits and forbids.

    Paths without a declared domain get a derived one.
    """
    if isinstance(policies, EffectivePolicy):
        triples = list(policies.rules())
    else:
        triples = [(p.layer, rid, r) for p in policies for rid, r in p.numbered_rules()]
    triples = [t for t in triples if t[2].effect in ("permit", "forbid")]
    referenced = set().union(*(paths_in(r.when) for _, _, r in triples)) if triples else set()
    full = derive_domains([r.when for _, _, r in triples])
    for path, values in (domains or {}).items():
        full[path] = list(values)
    full = {p: full[p] for p in referenced}
    out = []
    for assignment, req in enumerate_requests(full, limit):
        for layer in LAYERS:
            permits = tuple(rid for lay, rid, r in triples if lay == layer and r.effect == "permit" and evaluate_expr(r.when, req) is True)
            if not permits:
                continue
            forbids = tuple(rid for lay, rid, r in triples if lay == layer and r.effect == "forbid" and evaluate_expr(r.when, req) is True)
            if forbids:
                out.append(Conflict(layer, tuple(sorted(assignment.items())), permits, forbids))
    return out
