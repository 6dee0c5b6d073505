"""Policy AST nodes and the canonical printer.

``parse_policy(format_policy(p)) == p`` holds for every well-formed AST.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

LAYERS = ("Enterprise", "Domain", "Plant")
CATEGORIES = ("Access", "Security", "Compliance", "Quality")
ROOTS = ("subject", "resource", "env", "asset")
EFFECTS = ("permit", "forbid", "escalate", "retain")
COMPARATORS = ("==", "!=", "<=", ">=", "<", ">")
AGGREGATION_LEVELS = ("sensor", "component", "asset", "line", "site", "enterprise")

DURATION_SECONDS = {"s": 1, "min": 60, "h": 3600, "d": 86400, "y": 365 * 86400}


@dataclass(frozen=True)
class Duration:
    amount: int
    unit: str

    @property
    def seconds(self) -> float:
        return float(self.amount * DURATION_SECONDS[self.unit])

    def __str__(self) -> str:
        return f"{self.amount}{self.unit}"


@dataclass(frozen=True)
class Lit:
    kind: str  # "string" | "int" | "float" | "bool"
    value: object

    def __str__(self) -> str:
        if self.kind == "string":
            return json.dumps(self.value, ensure_ascii=False)
        if self.kind == "bool":
            return "true" if self.value else "false"
        return repr(self.value)


def lit(value) -> Lit:
    if isinstance(value, bool):
        return Lit("bool", value)
    if isinstance(value, int):
        return Lit("int", value)
    if isinstance(value, float):
        return Lit("float", value)
    if isinstance(value, str):
        return Lit("string", value)
    raise TypeError(f"unsupported literal {value!r}")


@dataclass(frozen=True)
class Path:
    root: str
    parts: tuple[str, ...]

    def __str__(self) -> str:
        return ".".join((self.root, *self.parts))

    @classmethod
    def of(cls, dotted: str) -> "Path":
        root, *parts = dotted.split(".")
        return cls(root, tuple(parts))


@dataclass(frozen=True)
class Compare:
    left: Path
    op: str
    right: Union[Lit, Path]


@dataclass(frozen=True)
class InSet:
    path: Path
    values: tuple[Lit, ...]


@dataclass(frozen=True)
class AgeCompare:
    op: str
    duration: Duration


@dataclass(frozen=True)
class Not:
    operand: "Expr"


@dataclass(frozen=True)
class And:
    items: tuple["Expr", ...]


@dataclass(frozen=True)
class Or:
    items: tuple["Expr", ...]


Expr = Union[Compare, InSet, AgeCompare, Not, And, Or]


@dataclass(frozen=True)
class Mask:
    path: Path

    def __str__(self) -> str:
        return f"mask({self.path})"


@dataclass(frozen=True)
class Aggregate:
    level: str

    def __str__(self) -> str:
        return f"aggregate({self.level})"


@dataclass(frozen=True)
class Retain:
    minimum: Duration
    maximum: Duration | None = None

    def __str__(self) -> str:
        if self.maximum is None:
            return f"retain {self.minimum}"
        return f"retain {self.minimum}..{self.maximum}"


Obligation = Union[Mask, Aggregate, Retain]


@dataclass(frozen=True)
class Rule:
    effect: str
    when: Expr
    obligations: tuple[Obligation, ...] = ()
    retention: Retain | None = None  # only for effect == "retain"


@dataclass(frozen=True)
class Policy:
    policy_id: str
    layer: str
    category: str
    version: str
    effective: str | None
    rules: tuple[Rule, ...]

    def rule_id(self, index: int) -> str:
        return f"{self.policy_id}#{index}"

    def numbered_rules(self):
        return [(self.rule_id(i), r) for i, r in enumerate(self.rules)]


def format_expr(expr: Expr) -> str:
    if isinstance(expr, Or):
        return " or ".join(_wrap(e, (Or,)) for e in expr.items)
    if isinstance(expr, And):
        return " and ".join(_wrap(e, (And, Or)) for e in expr.items)
    if isinstance(expr, Not):
        return "not " + _wrap(expr.operand, (And, Or))
    if isinstance(expr, Compare):
        return f"{expr.left} {expr.op} {expr.right}"
    if isinstance(expr, InSet):
        return f"{expr.path} in {{{', '.join(str(v) for v in expr.values)}}}"
    if isinstance(expr, AgeCompare):
        return f"age {expr.op} {expr.duration}"
    raise TypeError(f"not an expression: {expr!r}")


def _wrap(expr: Expr, kinds) -> str:
    text = format_expr(expr)
    return f"({text})" if isinstance(expr, kinds) else text


def format_rule(rule: Rule) -> str:
    if rule.effect == "retain":
        head = f"{rule.retention} when {format_expr(rule.when)}"
    else:
        head = f"{rule.effect} when {format_expr(rule.when)}"
    if rule.obligations:
        head += " with " + ", ".join(str(o) for o in rule.obligations)
    return head


def format_policy(policy: Policy) -> str:
    header = (
        f"policy {policy.policy_id} layer {policy.layer} category {policy.category} "
        f"version {policy.version}"
    )
    if policy.effective:
        header += f" effective {policy.effective}"
    lines = [header] + ["  " + format_rule(r) for r in policy.rules]
    return "\n".join(lines) + "\n"


def paths_in(expr: Expr) -> set[str]:
    """Attribute paths referenced by an expression; ``age`` counts as one."""
    if isinstance(expr, (And, Or)):
        out: set[str] = set()
        for item in expr.items:
            out |= paths_in(item)
        return out
    if isinstance(expr, Not):
        return paths_in(expr.operand)
    if isinstance(expr, Compare):
        out = {str(expr.left)}
        if isinstance(expr.right, Path):
            out.add(str(expr.right))
        return out
    if isinstance(expr, InSet):
        return {str(expr.path)}
    if isinstance(expr, AgeCompare):
        return {"age"}
    raise TypeError(expr)
