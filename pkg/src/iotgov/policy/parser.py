"""Recursive-descent parser for the policy DSL.

Grammar::

    policy     := "policy" IDENT "layer" LAYER "category" CAT "version" SEMVER
                  ["effective" DATE] rule+
    rule       := ("permit" | "forbid" | "escalate") "when" expr [with]
                | "retain" DURATION [".." DURATION] "when" expr [with]
    with       := "with" obligation ("," obligation)*
    expr       := term ("or" term)*
    term       := pred ("and" pred)*
    pred       := path CMP (literal | path)
                | path "in" "{" literal ("," literal)* "}"
                | "age" CMP DURATION
                | "not" pred
                | "(" expr ")"
    path       := ("subject" | "resource" | "env" | "asset") ("." IDENT)+
    obligation := "mask" "(" path ")" | "aggregate" "(" IDENT ")"
                | "retain" DURATION [".." DURATION]

``#`` starts a comment that runs to the end of the line.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import date

from ..errors import BadDuration, PolicySyntaxError, UnknownAttributeRoot
from .ast import (
    AGGREGATION_LEVELS,
    CATEGORIES,
    DURATION_SECONDS,
    LAYERS,
    ROOTS,
    Aggregate,
    AgeCompare,
    And,
    Compare,
    Duration,
    Expr,
    InSet,
    Lit,
    Mask,
    Not,
    Obligation,
    Or,
    Path,
    Policy,
    Retain,
    Rule,
)

_TOKEN_SPEC = [
    ("WS", r"[ \t\r\n]+"),
    ("COMMENT", r"#[^\n]*"),
    ("STRING", r'"(?:[^"\\\n]|\\.)*"'),
    ("DATE", r"\d{4}-\d{2}-\d{2}(?![\w.])"),
    ("SEMVER", r"\d+\.\d+\.\d+(?![\w.])"),
    ("NUMBER", r"-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?(?![\w])"),
    ("DURATION", r"\d+[A-Za-z]+(?![\w])"),
    ("RANGE", r"\.\."),
    ("CMP", r"==|!=|<=|>=|<|>"),
    ("WORD", r"[A-Za-z_][A-Za-z0-9_\-]*"),
    ("PUNCT", r"[.(){},]"),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in _TOKEN_SPEC))

KEYWORDS = {
    "policy", "layer", "category", "version", "effective", "permit", "forbid", "escalate",
    "retain", "when", "with", "and", "or", "not", "in", "age", "mask", "aggregate", "true", "false",
}
RULE_STARTS = ("permit", "forbid", "escalate", "retain")


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise PolicySyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind, chunk = match.lastgroup, match.group()
        if kind not in ("WS", "COMMENT"):
            tokens.append(Token(kind, chunk, line, pos - line_start + 1))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rfind("\n") + 1
        pos = match.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


def parse_duration_text(text: str, line: int = 0, column: int = 0) -> Duration:
    match = re.fullmatch(r"(\d+)([A-Za-z]+)", text)
    if match is None or match.group(2) not in DURATION_SECONDS:
        raise BadDuration(f"bad duration {text!r}; units are {', '.join(DURATION_SECONDS)}", line, column)
    return Duration(int(match.group(1)), match.group(2))


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0

    # -- token helpers -------------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def error(self, message: str, tok: Token | None = None, cls=PolicySyntaxError):
        tok = tok or self.tok
        return cls(message, tok.line, tok.column)

    def advance(self) -> Token:
        tok = self.tok
        self.pos += 1
        return tok

    def at_word(self, *words: str) -> bool:
        return self.tok.kind == "WORD" and self.tok.text in words

    def expect_word(self, word: str) -> Token:
        if not self.at_word(word):
            raise self.error(f"expected '{word}', found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def expect_punct(self, char: str) -> Token:
        if self.tok.kind != "PUNCT" or self.tok.text != char:
            raise self.error(f"expected '{char}', found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def at_punct(self, char: str) -> bool:
        return self.tok.kind == "PUNCT" and self.tok.text == char

    def ident(self, what: str) -> str:
        if self.tok.kind != "WORD" or self.tok.text in KEYWORDS:
            raise self.error(f"expected {what}, found {self.tok.text or 'end of input'!r}")
        return self.advance().text

    def duration(self) -> Duration:
        tok = self.tok
        if tok.kind != "DURATION":
            if tok.kind == "NUMBER":
                raise self.error(f"duration {tok.text!r} lacks a unit", cls=BadDuration)
            raise self.error(f"expected a duration, found {tok.text or 'end of input'!r}")
        self.advance()
        return parse_duration_text(tok.text, tok.line, tok.column)

    # -- grammar ---------------------------------------------------------------
    def policy(self) -> Policy:
        self.expect_word("policy")
        policy_id = self.ident("policy id")
        self.expect_word("layer")
        layer = self.choice(LAYERS, "layer")
        self.expect_word("category")
        category = self.choice(CATEGORIES, "category")
        self.expect_word("version")
        if self.tok.kind != "SEMVER":
            raise self.error(f"expected a major.minor.patch version, found {self.tok.text!r}")
        version = self.advance().text
        effective = None
        if self.at_word("effective"):
            self.advance()
            tok = self.tok
            if tok.kind != "DATE":
                raise self.error(f"expected YYYY-MM-DD, found {tok.text!r}")
            try:
                date.fromisoformat(tok.text)
            except ValueError:
                raise self.error(f"invalid date {tok.text!r}") from None
            effective = self.advance().text
        rules = []
        while self.at_word(*RULE_STARTS):
            rules.append(self.rule())
        if not rules:
            raise self.error("a policy needs at least one rule")
        if self.tok.kind != "EOF":
            raise self.error(f"unexpected {self.tok.text!r}")
        return Policy(policy_id, layer, category, version, effective, tuple(rules))

    def choice(self, options, what: str) -> str:
        tok = self.tok
        if tok.kind != "WORD" or tok.text not in options:
            raise self.error(f"expected {what} ({'|'.join(options)}), found {tok.text!r}")
        return self.advance().text

    def rule(self) -> Rule:
        effect = self.advance().text
        retention = None
        if effect == "retain":
            retention = self.retention_tail()
        self.expect_word("when")
        expr = self.expr()
        obligations: list[Obligation] = []
        if self.at_word("with"):
            self.advance()
            obligations.append(self.obligation())
            while self.at_punct(","):
                self.advance()
                obligations.append(self.obligation())
        return Rule(effect, expr, tuple(obligations), retention)

    def retention_tail(self) -> Retain:
        minimum = self.duration()
        maximum = None
        if self.tok.kind == "RANGE":
            self.advance()
            maximum = self.duration()
            if maximum.seconds < minimum.seconds:
                raise self.error("retention maximum is below its minimum", cls=BadDuration)
        return Retain(minimum, maximum)

    def obligation(self) -> Obligation:
        if self.at_word("mask"):
            self.advance()
            self.expect_punct("(")
            path = self.path()
            self.expect_punct(")")
            return Mask(path)
        if self.at_word("aggregate"):
            self.advance()
            self.expect_punct("(")
            tok = self.tok
            level = self.ident("aggregation level")
            if level not in AGGREGATION_LEVELS:
                raise self.error(f"unknown aggregation level {level!r}", tok)
            self.expect_punct(")")
            return Aggregate(level)
        if self.at_word("retain"):
            self.advance()
            return self.retention_tail()
        raise self.error(f"expected an obligation, found {self.tok.text!r}")

    def expr(self) -> Expr:
        items = [self.term()]
        while self.at_word("or"):
            self.advance()
            items.append(self.term())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def term(self) -> Expr:
        items = [self.pred()]
        while self.at_word("and"):
            self.advance()
            items.append(self.pred())
        return items[0] if len(items) == 1 else And(tuple(items))

    def pred(self) -> Expr:
        if self.at_word("not"):
            self.advance()
            return Not(self.pred())
        if self.at_punct("("):
            self.advance()
            inner = self.expr()
            self.expect_punct(")")
            return inner
        if self.at_word("age"):
            self.advance()
            op = self.comparator()
            return AgeCompare(op, self.duration())
        path = self.path()
        if self.at_word("in"):
            self.advance()
            self.expect_punct("{")
            values = [self.literal()]
            while self.at_punct(","):
                self.advance()
                values.append(self.literal())
            self.expect_punct("}")
            return InSet(path, tuple(values))
        op = self.comparator()
        if self.tok.kind == "WORD" and self.tok.text not in ("true", "false"):
            return Compare(path, op, self.path())
        return Compare(path, op, self.literal())

    def comparator(self) -> str:
        if self.tok.kind != "CMP":
            raise self.error(f"expected a comparison operator, found {self.tok.text or 'end of input'!r}")
        return self.advance().text

    def path(self) -> Path:
        tok = self.tok
        if tok.kind != "WORD":
            raise self.error(f"expected an attribute path, found {tok.text or 'end of input'!r}")
        root = self.advance().text
        if not self.at_punct("."):
            if root in ROOTS:
                raise self.error(f"attribute path '{root}' needs at least one field", tok)
            raise self.error(f"expected an attribute path, found {root!r}", tok)
        if root not in ROOTS:
            raise self.error(
                f"unknown attribute root {root!r}; expected one of {', '.join(ROOTS)}", tok, UnknownAttributeRoot
            )
        parts = []
        while self.at_punct("."):
            self.advance()
            if self.tok.kind != "WORD":
                raise self.error(f"expected a field name, found {self.tok.text!r}")
            parts.append(self.advance().text)
        return Path(root, tuple(parts))

    def literal(self) -> Lit:
        tok = self.tok
        if tok.kind == "STRING":
            self.advance()
            return Lit("string", json.loads(tok.text))
        if tok.kind == "NUMBER":
            self.advance()
            if any(c in tok.text for c in ".eE"):
                return Lit("float", float(tok.text))
            return Lit("int", int(tok.text))
        if self.at_word("true", "false"):
            self.advance()
            return Lit("bool", tok.text == "true")
        raise self.error(f"expected a literal, found {tok.text or 'end of input'!r}")


def parse_policy(text: str) -> Policy:
    return _Parser(text).policy()


def parse_expr(text: str) -> Expr:
    parser = _Parser(text)
    expr = parser.expr()
    if parser.tok.kind != "EOF":
        raise parser.error(f"unexpected {parser.tok.text!r}")
    return expr


def parse_rule(text: str) -> Rule:
    parser = _Parser(text)
    if not parser.at_word(*RULE_STARTS):
        raise parser.error(f"a rule starts with one of {', '.join(RULE_STARTS)}")
    rule = parser.rule()
    if parser.tok.kind != "EOF":
        raise parser.error(f"unexpected {parser.tok.text!r}")
    return rule
