"""Canonical baseline, unit table and declarative vendor-signal mappings."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from typing import Any, Mapping

from .errors import (
    NonInvertibleTransform,
    UnitMismatch,
    UnknownConcept,
    UnmappedSignal,
    UnparseableTimestamp,
    UnsupportedConversion,
)

# unit -> (dimension, scale, offset); base = value * scale + offset
UNITS: dict[str, tuple[str, float, float]] = {
    "degC": ("temperature", 1.0, 0.0),
    "degF": ("temperature", 5.0 / 9.0, -32.0 * 5.0 / 9.0),
    "K": ("temperature", 1.0, -273.15),
    "kPa": ("pressure", 1.0, 0.0),
    "Pa": ("pressure", 1e-3, 0.0),
    "bar": ("pressure", 100.0, 0.0),
    # 1 psi = 0.45359237 kg * 9.80665 m/s^2 / (0.0254 m)^2
    "psi": ("pressure", 0.45359237 * 9.80665 / 0.0254**2 / 1000.0, 0.0),
    "s": ("time", 1.0, 0.0),
    "ms": ("time", 1e-3, 0.0),
    "min": ("time", 60.0, 0.0),
    "h": ("time", 3600.0, 0.0),
    "L/min": ("flow", 1.0, 0.0),
    "gal/min": ("flow", 3.785411784, 0.0),
    "kW": ("power", 1.0, 0.0),
    "W": ("power", 1e-3, 0.0),
    "hp": ("power", 0.745699872, 0.0),
    "mm/s": ("velocity", 1.0, 0.0),
    "in/s": ("velocity", 25.4, 0.0),
    "%RH": ("humidity", 1.0, 0.0),
    "count": ("count", 1.0, 0.0),
}


def convert_unit(value: float, source: str, target: str) -> float:
    """Exact affine conversion between two units of the same dimension."""
    try:
        dim_a, scale_a, off_a = UNITS[source]
        dim_b, scale_b, off_b = UNITS[target]
    except KeyError as exc:
        raise UnsupportedConversion(f"unknown unit {exc.args[0]!r}") from None
    if dim_a != dim_b:
        raise UnsupportedConversion(f"{source} ({dim_a}) -> {target} ({dim_b})")
    if source == target:
        return value
    return ((value * scale_a + off_a) - off_b) / scale_b


# -- canonical baseline ---------------------------------------------------------

BASELINE_CONCEPTS: dict[str, str | None] = {
    "Asset": None,
    "Asset.Identifier": None,
    "Asset.SerialNumber": None,
    "Location": None,
    "Location.Site": None,
    "Location.Jurisdiction": None,
    "Event": None,
    "Event.Alarm": None,
    "Event.StateChange": None,
    "Event.Timestamp": None,
    "Measurement": None,
    "Measurement.Temperature": "degC",
    "Measurement.Pressure": "kPa",
    "Measurement.Duration": "s",
    "Measurement.Flow": "L/min",
    "Measurement.Power": "kW",
    "Measurement.Vibration": "mm/s",
    "Measurement.Humidity": "%RH",
    "Measurement.Count": "count",
    "Measurement.Status": None,
}


class CanonicalBaseline:
    """Enterprise concept set plus domain extensions that may add, never shadow."""

    def __init__(self, concepts: Mapping[str, str | None] | None = None):
        self._base = dict(BASELINE_CONCEPTS if concepts is None else concepts)
        self._extensions: dict[str, tuple[str, str | None]] = {}

    def extend(self, domain: str, name: str, unit: str | None = None) -> None:
        if name in self._base or name in self._extensions:
            raise UnknownConcept(f"{name!r} already defined; extensions cannot redefine concepts")
        root = name.split(".")[0]
        if root not in self._base:
            raise UnknownConcept(f"extension {name!r} must hang off a baseline root concept")
        if unit is not None and unit not in UNITS:
            raise UnsupportedConversion(unit)
        self._extensions[name] = (domain, unit)

    def has(self, name: str) -> bool:
        return name in self._base or name in self._extensions

    def unit(self, name: str) -> str | None:
        if name in self._base:
            return self._base[name]
        if name in self._extensions:
            return self._extensions[name][1]
        raise UnknownConcept(name)

    def concepts(self) -> list[str]:
        return sorted([*self._base, *self._extensions])


# -- mapping specs --------------------------------------------------------------


@dataclass(frozen=True)
class Transform:
    kind: str = "affine"  # "affine" or "table"
    a: float = 1.0
    b: float = 0.0
    table: tuple[tuple[Any, float], ...] = ()

    def apply(self, value: Any) -> float:
        if self.kind == "affine":
            return self.a * value + self.b
        lookup = dict(self.table)
        if value not in lookup:
            raise UnmappedSignal(f"no table entry for raw value {value!r}")
        return lookup[value]

    def invert(self, value: float) -> Any:
        if self.kind == "affine":
            return (value - self.b) / self.a
        for raw, mapped in self.table:
            if mapped == value:
                return raw
        raise KeyError(value)

    def check_invertible(self) -> None:
        if self.kind == "affine":
            if self.a == 0 or not math.isfinite(self.a) or not math.isfinite(self.b):
                raise NonInvertibleTransform(f"affine a={self.a}")
        elif self.kind == "table":
            outputs = [v for _, v in self.table]
            if len(outputs) != len(set(outputs)):
                raise NonInvertibleTransform("table maps two raw values onto one output")
        else:
            raise NonInvertibleTransform(f"unknown transform kind {self.kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "affine":
            return {"type": "affine", "a": self.a, "b": self.b}
        return {"type": "table", "table": [[k, v] for k, v in self.table]}

    @classmethod
    def from_dict(cls, data: Mapping | None) -> "Transform":
        if not data:
            return cls()
        if data.get("type", "affine") == "affine":
            return cls("affine", float(data.get("a", 1.0)), float(data.get("b", 0.0)))
        if data["type"] == "table":
            table = data["table"]
            items = table.items() if isinstance(table, Mapping) else table
            return cls("table", table=tuple((k, float(v)) for k, v in items))
        return cls(data["type"])


@dataclass(frozen=True)
class MappingSpec:
    id: str
    version: str
    signal: str
    target: str
    source_unit: str | None
    value_field: str
    transform: Transform = Transform()
    contract_id: str | None = None
    timestamp_format: str = "iso"  # iso | epoch_ms | epoch_s
    utc_offset: str | None = None  # applied to naive timestamps, e.g. "+02:00"
    max_skew_s: float = 0.0

    @property
    def tag(self) -> str:
        return f"{self.id}@{self.version}"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "version": self.version,
            "signal": self.signal,
            "target": self.target,
            "source_unit": self.source_unit,
            "value_field": self.value_field,
            "transform": self.transform.to_dict(),
            "contract": self.contract_id,
            "timestamp": {"format": self.timestamp_format, "offset": self.utc_offset, "max_skew_s": self.max_skew_s},
        }

    @classmethod
    def from_dict(cls, data: Mapping, default_version: str = "1.0.0") -> "MappingSpec":
        ts = data.get("timestamp") or {}
        return cls(
            id=data.get("id", data["signal"]),
            version=str(data.get("version", default_version)),
            signal=data["signal"],
            target=data["target"],
            source_unit=data.get("source_unit"),
            value_field=data.get("value_field", "value"),
            transform=Transform.from_dict(data.get("transform")),
            contract_id=data.get("contract"),
            timestamp_format=ts.get("format", "iso"),
            utc_offset=ts.get("offset"),
            max_skew_s=float(ts.get("max_skew_s", 0.0)),
        )


@dataclass
class MappingSet:
    version: str
    mappings: dict[str, MappingSpec] = field(default_factory=dict)
    baseline: CanonicalBaseline = field(default_factory=CanonicalBaseline)

    def for_signal(self, signal: str) -> MappingSpec:
        try:
            return self.mappings[signal]
        except KeyError:
            raise UnmappedSignal(signal) from None

    def __contains__(self, signal: str) -> bool:
        return signal in self.mappings

    def to_dict(self) -> dict:
        return {"version": self.version, "mappings": [m.to_dict() for m in self.mappings.values()]}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False)


def load_mapping_set(document: str | Mapping, baseline: CanonicalBaseline | None = None) -> MappingSet:
    """Parse and check a mapping document (JSON text or an already-parsed dict)."""
    data = json.loads(document) if isinstance(document, str) else document
    baseline = baseline or CanonicalBaseline()
    version = str(data.get("version", "1.0.0"))
    out = MappingSet(version=version, baseline=baseline)
    for item in data.get("mappings", []):
        spec = MappingSpec.from_dict(item, default_version=version)
        if not baseline.has(spec.target):
            raise UnknownConcept(spec.target)
        spec.transform.check_invertible()
        canonical_unit = baseline.unit(spec.target)
        if canonical_unit is not None and spec.source_unit is not None:
            # raises UnsupportedConversion when the dimensions differ
            convert_unit(0.0, spec.source_unit, canonical_unit)
        out.mappings[spec.signal] = spec
    return out


# -- raw and canonical records ------------------------------------------------


@dataclass(frozen=True)
class RawSignal:
    signal: str
    value: Any
    unit: str | None = None
    timestamp: Any = None
    device_id: str | None = None
    asset_ref: str | None = None


@dataclass(frozen=True)
class CanonicalMeasurement:
    asset_ref: str | None
    concept: str
    value: float
    unit: str | None
    event_time: float
    ingestion_time: float
    lineage: tuple[str, ...]
    signal: str = ""
    device_id: str | None = None

    def to_dict(self) -> dict:
        return {
            "asset_ref": self.asset_ref,
            "concept": self.concept,
            "value": self.value,
            "unit": self.unit,
            "event_time": self.event_time,
            "ingestion_time": self.ingestion_time,
            "lineage": list(self.lineage),
            "signal": self.signal,
            "device_id": self.device_id,
        }


def apply_mapping(
    signal: RawSignal | CanonicalMeasurement,
    mapping: MappingSpec,
    baseline: CanonicalBaseline | None = None,
    event_time: float | None = None,
    ingestion_time: float | None = None,
) -> CanonicalMeasurement:
    """Normalize a raw signal; re-applying to its own output is a no-op."""
    if isinstance(signal, CanonicalMeasurement):
        if mapping.tag in signal.lineage:
            return signal
        if signal.signal != mapping.signal:
            raise UnmappedSignal(signal.signal)
        raise UnitMismatch(f"{signal.signal} is already canonical under {signal.lineage}")
    if signal.signal != mapping.signal:
        raise UnmappedSignal(signal.signal)
    if signal.unit is not None and mapping.source_unit is not None and signal.unit != mapping.source_unit:
        raise UnitMismatch(f"{signal.signal}: got {signal.unit}, mapping expects {mapping.source_unit}")
    baseline = baseline or CanonicalBaseline()
    target_unit = baseline.unit(mapping.target)
    value = mapping.transform.apply(signal.value)
    if target_unit is not None and mapping.source_unit is not None:
        value = convert_unit(value, mapping.source_unit, target_unit)
    if event_time is None:
        event_time = to_epoch(signal.timestamp, mapping.timestamp_format, mapping.utc_offset)
    return CanonicalMeasurement(
        asset_ref=signal.asset_ref,
        concept=mapping.target,
        value=value,
        unit=target_unit,
        event_time=event_time,
        ingestion_time=event_time if ingestion_time is None else ingestion_time,
        lineage=(mapping.tag,),
        signal=signal.signal,
        device_id=signal.device_id,
    )


# -- timestamps -------------------------------------------------------------------


def _parse_offset(offset: str | None) -> timezone:
    if not offset:
        return timezone.utc
    sign = -1 if offset[0] == "-" else 1
    body = offset.lstrip("+-").replace(":", "")
    if len(body) != 4 or not body.isdigit():
        raise UnparseableTimestamp(f"bad UTC offset {offset!r}")
    return timezone(sign * timedelta(hours=int(body[:2]), minutes=int(body[2:])))


def to_epoch(raw: Any, fmt: str = "iso", offset: str | None = None) -> float:
    """UTC epoch seconds for a vendor timestamp."""
    if raw is None:
        raise UnparseableTimestamp("missing timestamp")
    if fmt in ("epoch_ms", "epoch_s"):
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise UnparseableTimestamp(f"expected a number, got {raw!r}")
        return raw / 1000.0 if fmt == "epoch_ms" else float(raw)
    if fmt != "iso":
        raise UnparseableTimestamp(f"unknown timestamp format {fmt!r}")
    if not isinstance(raw, str):
        raise UnparseableTimestamp(f"expected ISO-8601 text, got {raw!r}")
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError:
        raise UnparseableTimestamp(raw) from None
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=_parse_offset(offset))
    return parsed.timestamp()


def epoch_to_iso(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass(frozen=True)
class DriftVerdict:
    event_time: float
    drift_s: float
    max_drift_s: float

    @property
    def violation(self) -> bool:
        return self.drift_s > self.max_drift_s

    @property
    def severe(self) -> bool:
        """Beyond twice the allowance; no longer a tolerable skew."""
        return self.drift_s > 2 * self.max_drift_s


def normalize_timestamp(
    raw: Any,
    source_offset: str | None,
    max_drift_s: float,
    ingestion_time: float,
    fmt: str = "iso",
) -> DriftVerdict:
    event_time = to_epoch(raw, fmt, source_offset)
    return DriftVerdict(event_time, abs(event_time - ingestion_time), max_drift_s)


class ReorderWindow:
    """Per-device ordering tracker with a bounded tolerance window.

    Arrivals older than the newest seen event by at most ``window_s`` are
    tolerated as reorderings; anything older is late.
    """

    def __init__(self, window_s: float = 10.0):
        self.window_s = window_s
        self._latest: dict[str, float] = {}
        self.reordered = 0
        self.late = 0

    def observe(self, key: str, event_time: float) -> str:
        latest = self._latest.get(key)
        if latest is None or event_time >= latest:
            self._latest[key] = event_time
            return "in_order"
        if latest - event_time <= self.window_s:
            self.reordered += 1
            return "reordered"
        self.late += 1
        return "late"


def with_lineage(measurement: CanonicalMeasurement, tag: str) -> CanonicalMeasurement:
    if tag in measurement.lineage:
        return measurement
    return replace(measurement, lineage=measurement.lineage + (tag,))
