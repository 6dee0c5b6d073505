"""Structural schemas for telemetry payloads.

Messages are named-field maps. A message is structurally valid when every
required field is present and non-null, every present value has the
declared type, and no field outside the schema appears. Range bounds are
checked separately and only ever yield warnings, so they play no part in
compatibility.

The value domains nest: every integer is an acceptable float and every
timestamp string is an acceptable string.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Iterable, Mapping

from .errors import MalformedContract


class FieldType(str, Enum):
    BOOLEAN = "boolean"
    INTEGER = "integer"
    FLOAT = "float"
    STRING = "string"
    TIMESTAMP = "timestamp"
    RECORD = "record"


NUMERIC = (FieldType.INTEGER, FieldType.FLOAT)

# (wider, narrower): every value of the narrower type is a value of the wider
_WIDENS = {(FieldType.FLOAT, FieldType.INTEGER), (FieldType.STRING, FieldType.TIMESTAMP)}

_TIMESTAMP_RE = re.compile(
    r"^\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}(:\d{2}(\.\d+)?)?(Z|[+-]\d{2}:?\d{2})?$"
)


class Bump(IntEnum):
    PATCH = 0
    MINOR = 1
    MAJOR = 2

    def __str__(self) -> str:
        return self.name.lower()


class CompatibilityMode(str, Enum):
    BACKWARD = "Backward"
    FORWARD = "Forward"
    FULL = "Full"
    NONE = "None"

    @classmethod
    def parse(cls, text: str) -> "CompatibilityMode":
        for mode in cls:
            if mode.value.lower() == str(text).lower():
                return mode
        raise ValueError(f"unknown compatibility mode {text!r}")


@dataclass(frozen=True)
class FieldSpec:
    name: str
    type: FieldType
    required: bool = False
    range: tuple[float, float] | None = None
    fields: "StructSchema | None" = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "type": self.type.value, "required": self.required}
        if self.range is not None:
            out["range"] = list(self.range)
        if self.fields is not None:
            out["fields"] = self.fields.to_dict()["fields"]
        return out


@dataclass(frozen=True)
class StructSchema:
    fields: tuple[FieldSpec, ...] = ()

    def __post_init__(self):
        names = [f.name for f in self.fields]
        if len(names) != len(set(names)):
            raise MalformedContract(f"duplicate field names in {names}")
        for f in self.fields:
            if f.range is not None:
                if f.type not in NUMERIC:
                    raise MalformedContract(f"range on non-numeric field {f.name!r}")
                lo, hi = f.range
                if lo > hi:
                    raise MalformedContract(f"empty range on {f.name!r}")
            if (f.type == FieldType.RECORD) != (f.fields is not None):
                raise MalformedContract(f"record field {f.name!r} needs a nested schema (and only records may have one)")

    @property
    def by_name(self) -> dict[str, FieldSpec]:
        return {f.name: f for f in self.fields}

    def field_at(self, dotted: str) -> FieldSpec | None:
        schema: StructSchema | None = self
        spec = None
        for part in dotted.split("."):
            if schema is None:
                return None
            spec = schema.by_name.get(part)
            if spec is None:
                return None
            schema = spec.fields
        return spec

    def to_dict(self) -> dict:
        return {"fields": [f.to_dict() for f in self.fields]}

    @classmethod
    def from_dict(cls, data: Mapping | Iterable) -> "StructSchema":
        items = data["fields"] if isinstance(data, Mapping) else data
        specs = []
        for item in items:
            try:
                ftype = FieldType(item["type"])
                name = item["name"]
            except (KeyError, ValueError) as exc:
                raise MalformedContract(f"bad field definition {item!r}") from exc
            rng = item.get("range")
            nested = item.get("fields")
            specs.append(
                FieldSpec(
                    name=name,
                    type=ftype,
                    required=bool(item.get("required", False)),
                    range=(float(rng[0]), float(rng[1])) if rng is not None else None,
                    fields=cls.from_dict(nested) if nested is not None else None,
                )
            )
        return cls(tuple(specs))


def schema(*fields: FieldSpec) -> StructSchema:
    return StructSchema(tuple(fields))


# -- validation --------------------------------------------------------------

STRUCTURAL_KINDS = frozenset({"missing_required", "type_mismatch", "unknown_field"})


@dataclass(frozen=True)
class Violation:
    field: str
    kind: str
    detail: str = ""


def value_matches(ftype: FieldType, value: Any) -> bool:
    if ftype == FieldType.BOOLEAN:
        return isinstance(value, bool)
    if ftype == FieldType.INTEGER:
        return isinstance(value, int) and not isinstance(value, bool)
    if ftype == FieldType.FLOAT:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if ftype == FieldType.STRING:
        return isinstance(value, str)
    if ftype == FieldType.TIMESTAMP:
        return isinstance(value, str) and bool(_TIMESTAMP_RE.match(value))
    if ftype == FieldType.RECORD:
        return isinstance(value, Mapping)
    return False


def validate_payload(schema: StructSchema, payload: Mapping[str, Any], prefix: str = "") -> list[Violation]:
    out: list[Violation] = []
    specs = schema.by_name
    for name in payload:
        if name not in specs:
            out.append(Violation(prefix + name, "unknown_field"))
    for spec in schema.fields:
        path = prefix + spec.name
        value = payload.get(spec.name)
        if value is None:
            if spec.required:
                out.append(Violation(path, "missing_required"))
            elif spec.name in payload:
                out.append(Violation(path, "null_value"))
            continue
        if not value_matches(spec.type, value):
            out.append(Violation(path, "type_mismatch", f"expected {spec.type.value}"))
            continue
        if spec.type == FieldType.RECORD:
            out.extend(validate_payload(spec.fields, value, path + "."))
        elif spec.range is not None:
            lo, hi = spec.range
            if not lo <= value <= hi:
                out.append(Violation(path, "out_of_range", f"{value!r} not in [{lo}, {hi}]"))
    return out


def is_valid(schema: StructSchema, payload: Mapping[str, Any]) -> bool:
    return not any(v.kind in STRUCTURAL_KINDS for v in validate_payload(schema, payload))


# -- evolution ---------------------------------------------------------------


def _accepts(wider: FieldType, narrower: FieldType) -> bool:
    return wider == narrower or (wider, narrower) in _WIDENS


def classify_schema_change(old: StructSchema, new: StructSchema) -> Bump:
    """Smallest semver bump that the structural change ``old -> new`` needs.

    Field order is not significant (messages are named-field), and range
    bounds are value metadata rather than structure.
    """
    bump = Bump.PATCH
    old_specs, new_specs = old.by_name, new.by_name
    for name, spec in old_specs.items():
        if name not in new_specs:
            return Bump.MAJOR
        other = new_specs[name]
        if other.type != spec.type:
            return Bump.MAJOR
        if other.required and not spec.required:
            return Bump.MAJOR
        if spec.required and not other.required:
            bump = max(bump, Bump.MINOR)
        if spec.type == FieldType.RECORD:
            inner = classify_schema_change(spec.fields, other.fields)
            if inner == Bump.MAJOR:
                return Bump.MAJOR
            bump = max(bump, inner)
    for name, spec in new_specs.items():
        if name not in old_specs:
            if spec.required:
                return Bump.MAJOR
            bump = max(bump, Bump.MINOR)
    return bump


@dataclass
class CompatibilityReport:
    compatible: bool
    violations: list[str] = field(default_factory=list)
    mode: CompatibilityMode = CompatibilityMode.BACKWARD


def _subset_violations(narrow: StructSchema, wide: StructSchema, prefix: str, label: str) -> list[str]:
    """Why some message valid under ``narrow`` is invalid under ``wide``."""
    out = []
    wide_specs = wide.by_name
    narrow_specs = narrow.by_name
    for name, spec in narrow_specs.items():
        path = prefix + name
        other = wide_specs.get(name)
        if other is None:
            out.append(f"{label}: field '{path}' is not accepted")
            continue
        if spec.type == FieldType.RECORD and other.type == FieldType.RECORD:
            out.extend(_subset_violations(spec.fields, other.fields, path + ".", label))
        elif not _accepts(other.type, spec.type):
            out.append(f"{label}: field '{path}' changes type {spec.type.value} -> {other.type.value}")
        if other.required and not spec.required:
            out.append(f"{label}: field '{path}' becomes required")
    for name, other in wide_specs.items():
        if name not in narrow_specs and other.required:
            out.append(f"{label}: required field '{prefix + name}' is absent from existing messages")
    return out


def check_compatibility(old: StructSchema, new: StructSchema, mode: CompatibilityMode | str) -> CompatibilityReport:
    """Backward: old messages stay valid under new. Forward: the converse."""
    mode = mode if isinstance(mode, CompatibilityMode) else CompatibilityMode.parse(mode)
    violations: list[str] = []
    if mode in (CompatibilityMode.BACKWARD, CompatibilityMode.FULL):
        violations += _subset_violations(old, new, "", "backward")
    if mode in (CompatibilityMode.FORWARD, CompatibilityMode.FULL):
        violations += _subset_violations(new, old, "", "forward")
    return CompatibilityReport(not violations, violations, mode)
