"""Brute-force reference implementations used to cross-check the library."""

from __future__ import annotations

import itertools
import random

from iotgov.policy.ast import AgeCompare, And, Compare, InSet, Lit, Not, Or, Path, Policy, Rule
from iotgov.schema import FieldSpec, FieldType, StructSchema

SCALARS = ("boolean", "integer", "float", "string", "timestamp")
NAMES = ("a", "b", "c", "d")
TS = "2024-01-01T00:00:00Z"

# one witness value per type; (python type name, value) avoids True == 1 aliasing
REPRESENTATIVE = {
    "boolean": ("bool", True),
    "integer": ("int", 1),
    "float": ("float", 1.5),
    "string": ("str", "x"),
    "timestamp": ("str", TS),
}
MEMBERS = {
    "boolean": {("bool", True)},
    "integer": {("int", 1)},
    "float": {("int", 1), ("float", 1.5)},
    "string": {("str", "x"), ("str", TS)},
    "timestamp": {("str", TS)},
}
ABSENT = object()


def random_schema(rng: random.Random, max_fields: int = 4) -> list[tuple[str, str, bool]]:
    names = rng.sample(NAMES, rng.randint(0, max_fields))
    return [(n, rng.choice(SCALARS), rng.random() < 0.5) for n in sorted(names)]


def mutate(rng: random.Random, fields: list[tuple[str, str, bool]]) -> list[tuple[str, str, bool]]:
    """A nearby schema: a few edits of the kinds schema evolution produces."""
    out = {n: (t, r) for n, t, r in fields}
    for _ in range(rng.randint(0, 3)):
        op = rng.choice(["add", "remove", "retype", "flip"])
        if op == "add":
            free = [n for n in NAMES if n not in out]
            if free:
                out[rng.choice(free)] = (rng.choice(SCALARS), rng.random() < 0.3)
        elif out:
            name = rng.choice(sorted(out))
            t, r = out[name]
            if op == "remove":
                del out[name]
            elif op == "retype":
                out[name] = (rng.choice(SCALARS), r)
            else:
                out[name] = (t, not r)
    return [(n, t, r) for n, (t, r) in sorted(out.items())]


def to_schema(fields) -> StructSchema:
    return StructSchema(tuple(FieldSpec(n, FieldType(t), r) for n, t, r in fields))


def message_valid(fields, message: dict) -> bool:
    spec = {n: (t, r) for n, t, r in fields}
    if any(name not in spec for name in message):
        return False
    for name, (t, required) in spec.items():
        if name not in message:
            if required:
                return False
            continue
        if message[name] not in MEMBERS[t]:
            return False
    return True


def messages(old, new):
    """Every message over the union of field names, each field absent or a witness of a type in play."""
    names = sorted({n for n, _, _ in old} | {n for n, _, _ in new})
    domains = []
    for name in names:
        types = {t for n, t, _ in old if n == name} | {t for n, t, _ in new if n == name}
        domains.append([ABSENT] + sorted({REPRESENTATIVE[t] for t in types}))
    for combo in itertools.product(*domains):
        yield {n: v for n, v in zip(names, combo) if v is not ABSENT}


def oracle_compatible(old, new, mode: str) -> bool:
    mode = mode.lower()
    if mode == "none":
        return True
    msgs = list(messages(old, new))
    backward = all(message_valid(new, m) for m in msgs if message_valid(old, m))
    forward = all(message_valid(old, m) for m in msgs if message_valid(new, m))
    return {"backward": backward, "forward": forward, "full": backward and forward}[mode]


def oracle_bump(old, new) -> str:
    o = {n: (t, r) for n, t, r in old}
    w = {n: (t, r) for n, t, r in new}
    if o == w:
        return "patch"
    for name, (t, r) in o.items():
        if name not in w or w[name][0] != t or (w[name][1] and not r):
            return "major"
    if any(r for name, (t, r) in w.items() if name not in o):
        return "major"
    return "minor"


def schema_pair_corpus(n: int, seed: int = 1234):
    rng = random.Random(seed)
    for _ in range(n):
        old = random_schema(rng)
        new = mutate(rng, old) if rng.random() < 0.8 else random_schema(rng)
        yield old, new


# -- policies ---------------------------------------------------------------------

SMALL_DOMAINS = {
    "subject.role": ["Analyst", "Operator", "Intern"],
    "subject.mfa": [True, False, None],
    "subject.clearance": [1, 2, 3],
    "subject.jurisdiction": ["DE", "US"],
    "resource.classification": ["Public", "Internal", "Confidential", "Restricted"],
    "asset.jurisdiction": ["DE", "US"],
}
_LITERAL_CHOICES = {
    "subject.role": ["Analyst", "Operator", "Intern"],
    "subject.mfa": [True, False],
    "subject.clearance": [1, 2, 3],
    "subject.jurisdiction": ["DE", "US"],
    "resource.classification": ["Public", "Internal", "Confidential", "Restricted"],
    "asset.jurisdiction": ["DE", "US"],
}


def _atom(rng: random.Random):
    roll = rng.random()
    if roll < 0.12:
        return Compare(Path.of("subject.jurisdiction"), rng.choice(["==", "!="]), Path.of("asset.jurisdiction"))
    path = rng.choice(sorted(_LITERAL_CHOICES))
    values = _LITERAL_CHOICES[path]
    if roll < 0.3 and len(values) > 2:
        picks = rng.sample(values, 2)
        return InSet(Path.of(path), tuple(Lit("string", v) for v in picks))
    value = rng.choice(values)
    kind = "bool" if isinstance(value, bool) else "int" if isinstance(value, int) else "string"
    ops = ["==", "!="] if kind != "int" else ["==", "!=", "<", ">=", "<="]
    return Compare(Path.of(path), rng.choice(ops), Lit(kind, value))


def random_expr(rng: random.Random, depth: int = 0):
    roll = rng.random()
    if depth >= 2 or roll < 0.45:
        return _atom(rng)
    if roll < 0.55:
        return Not(_atom(rng))
    items = tuple(random_expr(rng, depth + 1) for _ in range(rng.randint(2, 3)))
    return And(items) if roll < 0.85 else Or(items)


def random_policy(rng: random.Random, layer: str, name: str, n_rules: int) -> Policy:
    rules = []
    for _ in range(n_rules):
        effect = rng.choices(["permit", "forbid", "escalate"], weights=[5, 3, 1])[0]
        rules.append(Rule(effect, random_expr(rng)))
    return Policy(name, layer, "Access", "1.0.0", None, tuple(rules))


def random_layered_set(rng: random.Random) -> tuple[Policy, list[Policy], list[Policy]]:
    enterprise = random_policy(rng, "Enterprise", "ent", rng.randint(1, 3))
    domain = [random_policy(rng, "Domain", "dom", rng.randint(1, 3))] if rng.random() < 0.85 else []
    plant = [random_policy(rng, "Plant", "plant", rng.randint(1, 3))] if rng.random() < 0.7 else []
    return enterprise, domain, plant


def oracle_eval(expr, assignment: dict) -> bool:
    """Plain two-valued evaluation for fully specified requests."""
    if isinstance(expr, And):
        return all(oracle_eval(e, assignment) for e in expr.items)
    if isinstance(expr, Or):
        return any(oracle_eval(e, assignment) for e in expr.items)
    if isinstance(expr, Not):
        return not oracle_eval(expr.operand, assignment)
    if isinstance(expr, InSet):
        v = assignment[str(expr.path)]
        return any(type(v) is type(x.value) and v == x.value for x in expr.values)
    if isinstance(expr, AgeCompare):
        return _cmp(assignment["age"], expr.op, expr.duration.seconds)
    left = assignment[str(expr.left)]
    right = assignment[str(expr.right)] if isinstance(expr.right, Path) else expr.right.value
    return _cmp(left, expr.op, right)


def _cmp(a, op, b) -> bool:
    same = (type(a) is bool) == (type(b) is bool) and (isinstance(a, str) == isinstance(b, str))
    if op == "==":
        return same and a == b
    if op == "!=":
        return not (same and a == b)
    if not same or isinstance(a, bool):
        return False
    return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op]


def oracle_conflicts(policies, domains: dict) -> set[tuple]:
    """Assignments on which some layer has a true permit and a true forbid."""
    keys = sorted(domains)
    out = set()
    for combo in itertools.product(*(domains[k] for k in keys)):
        a = dict(zip(keys, combo))
        for layer in ("Enterprise", "Domain", "Plant"):
            rules = [r for p in policies if p.layer == layer for r in p.rules]
            if any(r.effect == "permit" and oracle_eval(r.when, a) for r in rules) and any(
                r.effect == "forbid" and oracle_eval(r.when, a) for r in rules
            ):
                out.add((layer, tuple(sorted(a.items()))))
    return out
