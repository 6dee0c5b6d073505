"""Policy DSL: parser, canonical printer and layered evaluation."""

from .ast import Policy, Rule, format_expr, format_policy, format_rule
from .engine import (
    AttributeRequest,
    Conflict,
    Decision,
    EffectivePolicy,
    LintViolation,
    RetentionDecision,
    compose_layers,
    derive_domains,
    detect_conflicts,
    evaluate_expr,
    evaluate_request,
    evaluate_retention,
    lint_policy,
    select_versions,
)
from .parser import parse_expr, parse_policy, parse_rule

__all__ = [
    "AttributeRequest",
    "Conflict",
    "Decision",
    "EffectivePolicy",
    "LintViolation",
    "Policy",
    "RetentionDecision",
    "Rule",
    "compose_layers",
    "derive_domains",
    "detect_conflicts",
    "evaluate_expr",
    "evaluate_request",
    "evaluate_retention",
    "format_expr",
    "format_policy",
    "format_rule",
    "lint_policy",
    "parse_expr",
    "parse_policy",
    "parse_rule",
    "select_versions",
]
