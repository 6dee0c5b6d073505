"""Deterministic plant-fleet generator and fault-injecting telemetry simulator.

Every random draw comes from a numpy Generator spawned from the scenario
seed, one stream per sensor, so adding a fault to one sensor never shifts
the values of another.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Any, Mapping

import numpy as np

from .assets import AssetNode, AssetRegistry, DeviceIdentity, DeviceState, Level, Lifecycle
from .audit import AuditLog
from .boundary import Gateway, IngestResult, TelemetryMessage
from .contracts import (
    ContractRegistry,
    DataContract,
    FieldSemantics,
    Ownership,
    QualitySla,
    Steward,
    Temporal,
)
from .errors import BadSpec, ScenarioInvalid, UnknownStream
from .mapping import CanonicalBaseline, MappingSet, convert_unit, load_mapping_set
from .policy.engine import compose_layers
from .policy.parser import parse_policy
from .privacy import PartitionStore
from .quality import QualityMonitor, score_window
from .schema import CompatibilityMode, FieldSpec, FieldType, StructSchema

EPOCH_BASE = 1_704_067_200.0  # 2024-01-01T00:00:00Z, a whole minute
FAULT_KINDS = (
    "UnitDrift",
    "Dropout",
    "Duplication",
    "TimestampCorruption",
    "SchemaDriftNoBump",
    "OutOfOrder",
    "DeviceRevocation",
)

# Two vendor dialects. Values are generated in the dialect's own unit and
# clipped to the declared range.
DIALECTS = {
    "A": {
        "value_field": "pv",
        "extra": ("q", FieldType.INTEGER),
        "timestamp": "epoch_ms",
        "measures": {
            "temperature": {"unit": "degF", "base": (170.0, 230.0), "range": (140.0, 260.0), "sd": 2.0, "code": "TT"},
            "pressure": {"unit": "psi", "base": (40.0, 80.0), "range": (20.0, 100.0), "sd": 1.0, "code": "PT"},
        },
    },
    "B": {
        "value_field": "reading",
        "extra": ("status", FieldType.STRING),
        "timestamp": "iso",
        "measures": {
            "temperature": {"unit": "degC", "base": (77.0, 110.0), "range": (60.0, 126.7), "sd": 1.0, "code": "TT"},
            "pressure": {"unit": "kPa", "base": (275.0, 550.0), "range": (140.0, 690.0), "sd": 5.0, "code": "PT"},
        },
    },
}
# the unit a miscalibrated device silently switches to
DRIFT_UNIT = {"degF": "degC", "degC": "degF", "psi": "kPa", "kPa": "psi"}
CONCEPT = {"temperature": "Measurement.Temperature", "pressure": "Measurement.Pressure"}
SITE_JURISDICTIONS = ("DE", "US", "FR", "CN")
UTC_OFFSETS = {"DE": "+01:00", "FR": "+01:00", "US": "-05:00", "CN": "+08:00"}

INGEST_POLICY = """\
policy ingest-baseline layer Enterprise category Security version 1.0.0
  permit when subject.state == "Active"
  forbid when asset.lifecycle == "Decommissioning"
"""


@dataclass(frozen=True)
class FleetSpec:
    sites: int = 2
    lines_per_site: int = 2
    assets_per_line: int = 3
    components_per_asset: int = 1
    sensors_per_component: int = 2
    sample_rate_hz: float = 1.0
    jurisdictions: tuple[str, ...] = SITE_JURISDICTIONS

    def check(self) -> None:
        for name in ("sites", "lines_per_site", "assets_per_line", "components_per_asset", "sensors_per_component"):
            if getattr(self, name) < 1:
                raise BadSpec(f"{name} must be >= 1")
        if self.sample_rate_hz <= 0:
            raise BadSpec("sample rate must be > 0")
        if not self.jurisdictions:
            raise BadSpec("at least one jurisdiction is needed")

    def to_dict(self) -> dict:
        return {
            "sites": self.sites,
            "lines_per_site": self.lines_per_site,
            "assets_per_line": self.assets_per_line,
            "components_per_asset": self.components_per_asset,
            "sensors_per_component": self.sensors_per_component,
            "sample_rate_hz": self.sample_rate_hz,
            "jurisdictions": list(self.jurisdictions),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "FleetSpec":
        data = dict(data)
        if "jurisdictions" in data:
            data["jurisdictions"] = tuple(data["jurisdictions"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise BadSpec(str(exc)) from None


@dataclass(frozen=True)
class SensorInfo:
    sensor_id: str
    device_id: str
    signal: str
    dialect: str
    measure: str
    contract_id: str
    unit: str
    base_value: float
    value_range: tuple[float, float]
    sd: float
    jurisdiction: str
    utc_offset: str


@dataclass
class Fleet:
    assets: AssetRegistry
    contracts: ContractRegistry
    mappings: MappingSet
    sensors: list[SensorInfo]
    secrets: dict[str, str]
    spec: FleetSpec
    seed: int

    def streams(self) -> dict[str, list[SensorInfo]]:
        out: dict[str, list[SensorInfo]] = {}
        for s in self.sensors:
            out.setdefault(s.contract_id, []).append(s)
        return out

    def mapping_document(self) -> dict:
        return self.mappings.to_dict()

    def dumps(self) -> str:
        """Canonical text of the whole fleet, used for determinism checks."""
        return json.dumps(
            {
                "assets": self.assets.to_dict(),
                "contracts": self.contracts.to_dict(),
                "mappings": self.mappings.to_dict(),
                "sensors": [s.__dict__ for s in self.sensors],
            },
            sort_keys=True,
        )


def device_secret(seed: int, device_id: str) -> str:
    return hashlib.sha256(f"{seed}:{device_id}".encode()).hexdigest()[:32]


def _contract_for(dialect: str, measure: str, rate: float) -> DataContract:
    d = DIALECTS[dialect]
    m = d["measures"][measure]
    extra_name, extra_type = d["extra"]
    schema = StructSchema(
        (
            FieldSpec(d["value_field"], FieldType.FLOAT, True, m["range"]),
            FieldSpec(extra_name, extra_type, False),
        )
    )
    domain = "thermal" if measure == "temperature" else "process"
    return DataContract(
        contract_id=f"{dialect.lower()}-{measure}",
        version="1.0.0",
        schema=schema,
        compatibility=CompatibilityMode.BACKWARD,
        semantics={d["value_field"]: FieldSemantics(m["unit"], 0.1, CONCEPT[measure])},
        temporal=Temporal("event", rate, 60.0, "per-device"),
        ownership=Ownership(
            domain,
            f"vendor-{dialect}",
            (
                Steward(f"steward-{domain}", "Responsible"),
                Steward(f"owner-{domain}", "Accountable"),
                Steward("reliability-eng", "Consulted"),
                Steward("governance-office", "Informed"),
            ),
        ),
        quality_sla=QualitySla(
            completeness=0.95, consistency=0.99, accuracy=0.95, freshness=0.95, validity=0.95, max_age_s=5.0, max_deviation=3 * m["sd"]
        ),
        classification="Confidential" if measure == "temperature" else "Internal",
    )


def generate_fleet(spec: FleetSpec | Mapping, seed: int) -> Fleet:
    """Assets, devices, contracts and mappings for a plant fleet; identical for identical inputs."""
    if not isinstance(spec, FleetSpec):
        spec = FleetSpec.from_dict(spec)
    spec.check()
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    baseline = CanonicalBaseline()
    assets = AssetRegistry()
    contracts = ContractRegistry(baseline)
    assets.register_node(AssetNode("ent", Level.ENTERPRISE, None, {"name": "enterprise", "taxonomy": "v1"}, Lifecycle.OPERATION))
    sensors: list[SensorInfo] = []
    mapping_docs = []
    secrets = {}
    seen_contracts = set()
    for si in range(spec.sites):
        jur = spec.jurisdictions[si % len(spec.jurisdictions)]
        dialect = "A" if si % 2 == 0 else "B"
        site_id = f"site-{si + 1:02d}"
        site_attrs = {
            "jurisdiction": jur,
            "geo": [round(float(rng.uniform(-60, 60)), 4), round(float(rng.uniform(-150, 150)), 4)],
            "timezone": UTC_OFFSETS.get(jur, "+00:00"),
            "vendor_dialect": dialect,
        }
        if jur in ("DE", "FR", "EU", "CN"):
            site_attrs["data_residency"] = "in-region"
        assets.register_node(AssetNode(site_id, Level.SITE, "ent", site_attrs, Lifecycle.OPERATION))
        for li in range(spec.lines_per_site):
            line_id = f"{site_id}-line-{li + 1:02d}"
            assets.register_node(AssetNode(line_id, Level.LINE, site_id, {"product_family": f"pf-{li + 1}"}, Lifecycle.OPERATION))
            for ai in range(spec.assets_per_line):
                asset_id = f"{line_id}-asset-{ai + 1:02d}"
                assets.register_node(
                    AssetNode(
                        asset_id, Level.ASSET, line_id,
                        {"criticality": int(rng.integers(1, 4)), "manufacturer": f"oem-{dialect}"},
                        Lifecycle.OPERATION,
                    )
                )
                for ci in range(spec.components_per_asset):
                    comp_id = f"{asset_id}-comp-{ci + 1:02d}"
                    assets.register_node(AssetNode(comp_id, Level.COMPONENT, asset_id, {"kind": "probe-assembly"}, Lifecycle.OPERATION))
                    for ni in range(spec.sensors_per_component):
                        measure = ("temperature", "pressure")[ni % 2]
                        m = DIALECTS[dialect]["measures"][measure]
                        sensor_id = f"{comp_id}-sensor-{ni + 1:02d}"
                        idx = len(sensors) + 1
                        if dialect == "A":
                            signal = f"PLC{si + 1}{li + 1}.{m['code']}{idx:03d}"
                        else:
                            signal = f"S{si + 1:02d}/L{li + 1:02d}/A{ai + 1:02d}/{m['code']}{idx:02d}"
                        assets.register_node(
                            AssetNode(
                                sensor_id, Level.SENSOR, comp_id,
                                {
                                    "measurement_type": measure,
                                    "units": m["unit"],
                                    "sample_rate_hz": spec.sample_rate_hz,
                                    "calibration_date": "2023-11-01",
                                },
                                Lifecycle.OPERATION,
                            )
                        )
                        contract = _contract_for(dialect, measure, spec.sample_rate_hz)
                        if contract.contract_id not in seen_contracts:
                            contracts.register_contract(contract)
                            contracts.promote(contract.contract_id)
                            seen_contracts.add(contract.contract_id)
                        device_id = f"dev-{idx:04d}"
                        secret = device_secret(seed, device_id)
                        secrets[device_id] = secret
                        assets.register_device(DeviceIdentity.provision(device_id, sensor_id, secret))
                        assets.activate_device(device_id)
                        lo, hi = m["base"]
                        offset = UTC_OFFSETS.get(jur, "+00:00")
                        sensors.append(
                            SensorInfo(
                                sensor_id, device_id, signal, dialect, measure, contract.contract_id, m["unit"],
                                round(float(rng.uniform(lo, hi)), 3), m["range"], m["sd"], jur, offset,
                            )
                        )
                        mapping_docs.append(
                            {
                                "id": f"map-{signal}",
                                "signal": signal,
                                "target": CONCEPT[measure],
                                "source_unit": m["unit"],
                                "value_field": DIALECTS[dialect]["value_field"],
                                "contract": contract.contract_id,
                                "timestamp": {"format": DIALECTS[dialect]["timestamp"], "offset": offset},
                            }
                        )
    mappings = load_mapping_set({"version": "1.0.0", "mappings": mapping_docs}, baseline)
    return Fleet(assets, contracts, mappings, sensors, secrets, spec, seed)


# -- scenario -----------------------------------------------------------------------


@dataclass(frozen=True)
class FaultSpec:
    at: float
    kind: str
    target: str
    rate: float | None = None
    skew: float | None = None
    window: float | None = None
    mode: str | None = None
    until: float | None = None

    def check(self, duration: float) -> None:
        if self.kind not in FAULT_KINDS:
            raise ScenarioInvalid(f"unknown fault kind {self.kind!r}")
        if not 0 <= self.at <= duration:
            raise ScenarioInvalid(f"fault at {self.at} outside [0, {duration}]")
        if self.until is not None and self.until < self.at:
            raise ScenarioInvalid("fault ends before it starts")
        if self.kind in ("Dropout", "Duplication"):
            if self.rate is None or not 0.0 <= self.rate <= 1.0:
                raise ScenarioInvalid(f"{self.kind} needs a rate in [0, 1]")
        if self.kind == "TimestampCorruption" and self.skew is None:
            raise ScenarioInvalid("TimestampCorruption needs a skew")
        if self.kind == "OutOfOrder" and (self.window is None or self.window < 0):
            raise ScenarioInvalid("OutOfOrder needs a non-negative window")
        if self.kind == "SchemaDriftNoBump" and (self.mode or "add") not in ("add", "drop", "rename"):
            raise ScenarioInvalid(f"unknown schema drift mode {self.mode!r}")

    def active(self, t: float) -> bool:
        return t >= self.at and (self.until is None or t < self.until)

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_dict(cls, data: Mapping) -> "FaultSpec":
        try:
            return cls(**dict(data))
        except TypeError as exc:
            raise ScenarioInvalid(f"bad fault entry {dict(data)!r}: {exc}") from None


@dataclass(frozen=True)
class Scenario:
    seed: int
    duration_s: float
    fleet: FleetSpec = FleetSpec()
    faults: tuple[FaultSpec, ...] = ()
    sample_fraction: float = 1.0
    window_s: float = 60.0
    latency_s: float = 0.2
    policies: tuple[str, ...] = ()

    def check(self) -> None:
        if self.duration_s <= 0:
            raise ScenarioInvalid("duration must be > 0")
        if not 0 < self.sample_fraction <= 1:
            raise ScenarioInvalid("sample fraction must lie in (0, 1]")
        if self.latency_s < 0 or self.window_s <= 0:
            raise ScenarioInvalid("latency must be >= 0 and window > 0")
        for f in self.faults:
            f.check(self.duration_s)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "duration_s": self.duration_s,
            "fleet": self.fleet.to_dict(),
            "faults": [f.to_dict() for f in self.faults],
            "sample_fraction": self.sample_fraction,
            "window_s": self.window_s,
            "latency_s": self.latency_s,
            "policies": list(self.policies),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Scenario":
        try:
            return cls(
                seed=int(data.get("seed", 0)),
                duration_s=float(data["duration_s"]),
                fleet=FleetSpec.from_dict(data.get("fleet") or {}),
                faults=tuple(FaultSpec.from_dict(f) for f in data.get("faults", [])),
                sample_fraction=float(data.get("sample_fraction", 1.0)),
                window_s=float(data.get("window_s", 60.0)),
                latency_s=float(data.get("latency_s", 0.2)),
                policies=tuple(data.get("policies", ())),
            )
        except (KeyError, ValueError) as exc:
            raise ScenarioInvalid(f"bad scenario document: {exc}") from None


@dataclass
class FaultOutcome:
    kind: str
    target: str
    at: float
    detected_at: float | None = None
    detection: str = "undetected"
    affected: int = 0
    acted_on: int = 0
    dropped: int = 0

    @property
    def latency(self) -> float | None:
        return None if self.detected_at is None else self.detected_at - self.at

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "target": self.target,
            "at": self.at,
            "detected_at": self.detected_at,
            "latency_s": self.latency,
            "detection": self.detection,
            "affected": self.affected,
            "acted_on": self.acted_on,
            "dropped": self.dropped,
        }


@dataclass
class ScenarioResult:
    produced: int
    accepted: int
    warned: int
    quarantined: int
    rejected: int
    faults: list[FaultOutcome]
    digest: str
    reports: int
    audit_valid: bool
    breaches: list[dict]
    retention: dict[str, float]
    completeness: dict[str, float]
    gateway: Gateway | None = field(default=None, repr=False)
    fleet: Fleet | None = field(default=None, repr=False)
    messages: list[TelemetryMessage] = field(default_factory=list, repr=False)

    @property
    def conserved(self) -> bool:
        return self.produced == self.accepted + self.warned + self.quarantined + self.rejected

    def to_dict(self) -> dict:
        return {
            "produced": self.produced,
            "accepted": self.accepted,
            "warned": self.warned,
            "quarantined": self.quarantined,
            "rejected": self.rejected,
            "conserved": self.conserved,
            "reports": self.reports,
            "audit_valid": self.audit_valid,
            "faults": [f.to_dict() for f in self.faults],
            "breaches": self.breaches,
            "retention": self.retention,
            "completeness": self.completeness,
            "digest": self.digest,
        }

    def summary(self) -> str:
        lines = [
            f"produced {self.produced}: accepted {self.accepted}, warned {self.warned}, "
            f"quarantined {self.quarantined}, rejected {self.rejected}",
            f"audit chain {'verifies' if self.audit_valid else 'BROKEN'}; {len(self.breaches)} SLA breaches",
        ]
        for f in self.faults:
            when = "undetected" if f.detected_at is None else f"detected after {f.latency:.1f}s via {f.detection}"
            effect = f"{f.dropped} messages lost" if f.kind == "Dropout" else f"{f.acted_on}/{f.affected} messages acted on"
            lines.append(f"fault {f.kind} on {f.target} at t={f.at:g}: {when} ({effect})")
        lines.append(f"digest {self.digest}")
        return "\n".join(lines)


@dataclass
class _Pending:
    arrival: float
    device: str
    seq: int
    msg: TelemetryMessage
    slot: int
    tags: tuple[int, ...]  # indexes of faults that touched this message


class Simulation:
    """One scenario run: fleet, gateway and fault schedule on a simulated clock."""

    def __init__(self, scenario: Scenario, keep_messages: bool = False):
        scenario.check()
        self.scenario = scenario
        self.fleet = generate_fleet(scenario.fleet, scenario.seed)
        self.keep_messages = keep_messages
        self._sensor = {s.device_id: s for s in self.fleet.sensors}
        self.faults: list[FaultSpec] = []
        self._targets: list[set[str]] = []
        self.monitor = QualityMonitor(
            window_s=scenario.window_s,
            sample_fraction=scenario.sample_fraction,
            rng=np.random.default_rng(np.random.SeedSequence(scenario.seed).spawn(3)[2]),
            origin=EPOCH_BASE,
            keep_history=True,
        )
        for stream, sensors in self.fleet.streams().items():
            contract = self.fleet.contracts.resolve_contract(stream)
            self.monitor.watch(stream, contract, [s.device_id for s in sensors], DIALECTS[sensors[0].dialect]["value_field"])
        policies = [parse_policy(INGEST_POLICY)] + [parse_policy(t) for t in scenario.policies]
        ingest_policy = compose_layers(
            [p for p in policies if p.layer == "Enterprise"],
            [p for p in policies if p.layer == "Domain"],
            [p for p in policies if p.layer == "Plant"],
        )
        self.gateway = Gateway(
            self.fleet.assets,
            self.fleet.contracts,
            self.fleet.mappings,
            ingest_policy=ingest_policy,
            audit=AuditLog(),
            partitions=PartitionStore(),
            monitor=self.monitor,
        )
        for f in scenario.faults:
            self.inject_fault(f.target, f.kind, f.at, **{k: v for k, v in f.to_dict().items() if k not in ("target", "kind", "at")})

    def resolve_target(self, target: str) -> set[str]:
        """Device ids behind a stream (contract id), signal, sensor, device or asset subtree."""
        streams = self.fleet.streams()
        if target in streams:
            return {s.device_id for s in streams[target]}
        hits = {s.device_id for s in self.fleet.sensors if target in (s.signal, s.sensor_id, s.device_id)}
        if not hits and target in self.fleet.assets:
            subtree = self.fleet.assets.descendants(target) | {target}
            hits = {s.device_id for s in self.fleet.sensors if s.sensor_id in subtree}
        if not hits:
            raise UnknownStream(target)
        return hits

    def inject_fault(self, stream: str, kind: str, at: float, **params) -> int:
        spec = FaultSpec(at, kind, stream, **params)
        spec.check(self.scenario.duration_s)
        self._targets.append(self.resolve_target(stream))
        self.faults.append(spec)
        return len(self.faults) - 1

    # -- generation ----------------------------------------------------------------
    def _generate(self) -> tuple[list[_Pending], dict[str, tuple[int, int]]]:
        sc = self.scenario
        rate = sc.fleet.sample_rate_hz
        ticks = int(math.floor(sc.duration_s * rate + 1e-9))
        children = np.random.SeedSequence(sc.seed).spawn(3)[1].spawn(len(self.fleet.sensors))
        pending: list[_Pending] = []
        self._dropped = [0] * len(self.faults)
        delivered: dict[str, tuple[int, int]] = {}
        for sensor, ss in zip(self.fleet.sensors, children):
            value_rng, fault_rng = (np.random.default_rng(s) for s in ss.spawn(2))
            lo, hi = sensor.value_range
            values = np.clip(sensor.base_value + value_rng.normal(0.0, sensor.sd, size=ticks), lo, hi)
            faults = [(i, f) for i, f in enumerate(self.faults) if sensor.device_id in self._targets[i]]
            # draw every fault's randomness up front so the stream is the same whether or not it fires
            draws = {i: fault_rng.random(ticks) for i, _ in faults}
            jitter = {i: fault_rng.random(ticks) for i, _ in faults}
            dialect = DIALECTS[sensor.dialect]
            slots = set()
            for k in range(ticks):
                t = k / rate
                tags: list[int] = []
                dropped = False
                duplicate = None
                value = float(values[k])
                ts_shift = 0.0
                delay = 0.0
                payload_edit = None
                for i, f in faults:
                    if not f.active(t):
                        continue
                    if f.kind == "Dropout" and draws[i][k] < f.rate:
                        dropped = True
                        self._dropped[i] += 1
                    elif f.kind == "Duplication" and draws[i][k] < f.rate:
                        duplicate = i
                    elif f.kind == "UnitDrift":
                        value = convert_unit(value, sensor.unit, DRIFT_UNIT[sensor.unit])
                        tags.append(i)
                    elif f.kind == "TimestampCorruption":
                        ts_shift += f.skew
                        tags.append(i)
                    elif f.kind == "OutOfOrder":
                        delay += float(jitter[i][k]) * f.window
                        tags.append(i)
                    elif f.kind == "SchemaDriftNoBump":
                        payload_edit = f.mode or "add"
                        tags.append(i)
                    elif f.kind == "DeviceRevocation":
                        tags.append(i)
                if dropped:
                    continue
                slots.add(k)
                event = EPOCH_BASE + t
                payload: dict[str, Any] = {dialect["value_field"]: round(value, 6)}
                if sensor.dialect == "A":
                    payload["q"] = 192
                    stamp: Any = int(round((event + ts_shift) * 1000))
                else:
                    payload["status"] = "ok"
                    stamp = _iso_with_offset(event + ts_shift, sensor.utc_offset)
                if payload_edit == "add":
                    payload["firmware_rev"] = "2.1.0"
                elif payload_edit == "drop":
                    del payload[dialect["value_field"]]
                elif payload_edit == "rename":
                    payload[dialect["value_field"] + "_v2"] = payload.pop(dialect["value_field"])
                msg = TelemetryMessage(
                    sensor.device_id, sensor.signal, payload, stamp, k, self.fleet.secrets[sensor.device_id]
                )
                arrival = event + sc.latency_s + delay
                pending.append(_Pending(arrival, sensor.device_id, k, msg, k, tuple(tags)))
                if duplicate is not None:
                    pending.append(_Pending(arrival + 0.01, sensor.device_id, k, msg, k, (*tags, duplicate)))
            delivered[sensor.device_id] = (len(slots), ticks)
        pending.sort(key=lambda p: (p.arrival, p.device, p.seq))
        return pending, delivered

    # -- run -------------------------------------------------------------------------
    def run(self) -> ScenarioResult:
        sc = self.scenario
        pending, delivered = self._generate()
        outcomes = [FaultOutcome(f.kind, f.target, f.at, dropped=n) for f, n in zip(self.faults, self._dropped)]
        revocations = sorted(
            ((EPOCH_BASE + f.at, i) for i, f in enumerate(self.faults) if f.kind == "DeviceRevocation"),
        )
        rev_pos = 0
        log = hashlib.sha256()
        newest: dict[str, float] = {}
        messages = []
        for p in pending:
            while rev_pos < len(revocations) and revocations[rev_pos][0] <= p.arrival:
                _, i = revocations[rev_pos]
                for dev in sorted(self._targets[i]):
                    if self.fleet.assets.device(dev).state != DeviceState.REVOKED:
                        self.fleet.assets.revoke_device(dev)
                log.update(f"revoke {i} {revocations[rev_pos][0]!r}\n".encode())
                rev_pos += 1
            self._close_windows(p.arrival, outcomes, log)
            result = self.gateway.ingest_message(p.msg, p.arrival)
            if self.keep_messages:
                messages.append(p.msg)
            kinds = sorted({v.kind for v in result.report.violations})
            log.update(f"{p.arrival!r} {p.msg.ref} {result.disposition} {','.join(kinds)}\n".encode())
            event = EPOCH_BASE + p.seq / sc.fleet.sample_rate_hz
            reordered = event < newest.get(p.device, -math.inf)
            newest[p.device] = max(newest.get(p.device, -math.inf), event)
            self._score_faults(p, result, kinds, reordered, outcomes)
        end = EPOCH_BASE + sc.duration_s
        self._close_windows(end + sc.latency_s + 1e-6, outcomes, log)
        for o in outcomes:
            log.update(json.dumps(o.to_dict(), sort_keys=True).encode() + b"\n")

        streams = self.fleet.streams()
        retention, completeness = {}, {}
        for stream, sensors in streams.items():
            got = sum(delivered[s.device_id][0] for s in sensors)
            exp = sum(delivered[s.device_id][1] for s in sensors)
            retention[stream] = got / exp if exp else 1.0
            completeness[stream] = self.stream_quality(stream, 1.0).dimensions["completeness"]
        counts = self.gateway.counts
        return ScenarioResult(
            produced=self.gateway.produced(),
            accepted=counts["Accept"],
            warned=counts["AcceptWithWarnings"],
            quarantined=counts["Quarantine"],
            rejected=counts["Reject"],
            faults=outcomes,
            digest=log.hexdigest(),
            reports=len(self.gateway.reports),
            audit_valid=self.gateway.audit.verify().valid,
            breaches=[b.to_dict() for b in self.monitor.breaches],
            retention=retention,
            completeness=completeness,
            gateway=self.gateway,
            fleet=self.fleet,
            messages=messages,
        )

    def stream_quality(self, stream: str, sample_fraction: float, rng: np.random.Generator | None = None):
        """Score a whole stream over the full scenario span in one window."""
        sc = self.scenario
        sensors = self.fleet.streams()[stream]
        contract = self.fleet.contracts.resolve_contract(stream)
        return score_window(
            stream,
            self.monitor.history.get(stream, []),
            contract,
            (EPOCH_BASE, EPOCH_BASE + sc.duration_s),
            sample_fraction=sample_fraction,
            rng=rng,
            expected_keys=[s.device_id for s in sensors],
            value_field=DIALECTS[sensors[0].dialect]["value_field"],
        )

    def _close_windows(self, now: float, outcomes: list[FaultOutcome], log) -> None:
        before = len(self.monitor.breaches)
        closed = self.monitor.advance(now)
        for score in closed:
            log.update(f"window {score.stream} {score.window[0]!r} {score.composite!r}\n".encode())
        for breach in self.monitor.breaches[before:]:
            log.update(f"breach {breach.product} {breach.dimension} {breach.detected_at!r}\n".encode())
        streams = self.fleet.streams()
        for i, f in enumerate(self.faults):
            if f.kind != "Dropout" or outcomes[i].detected_at is not None:
                continue
            for score in closed:
                # only windows that start once the fault is active can reflect it
                if score.window[0] < EPOCH_BASE + f.at:
                    continue
                if not {s.device_id for s in streams[score.stream]} & self._targets[i]:
                    continue
                sla = self.fleet.contracts.resolve_contract(score.stream).quality_sla
                if sla is not None and score.dimensions["completeness"] < sla.completeness:
                    outcomes[i].detected_at = score.window[1] - EPOCH_BASE
                    outcomes[i].detection = "sla_breach:completeness"
                    break

    def _score_faults(self, p: _Pending, result: IngestResult, kinds: list[str], reordered: bool, outcomes: list[FaultOutcome]) -> None:
        for i in p.tags:
            f = self.faults[i]
            o = outcomes[i]
            if f.kind == "UnitDrift":
                affected, acted, how = True, "out_of_range" in kinds, "out_of_range"
            elif f.kind == "SchemaDriftNoBump":
                affected = True
                acted = result.disposition == "Quarantine" and bool({"unknown_field", "missing_required"} & set(kinds))
                how = "schema_violation"
            elif f.kind == "DeviceRevocation":
                affected = self.fleet.assets.device(p.device).state == DeviceState.REVOKED
                acted, how = result.disposition == "Reject", "admission_reject"
            elif f.kind == "TimestampCorruption":
                contract = self.fleet.contracts.resolve_contract(self._sensor[p.device].contract_id)
                affected = abs(f.skew) > contract.temporal.max_drift_s
                acted, how = bool({"drift", "drift_severe"} & set(kinds)), "drift"
            elif f.kind == "Duplication":
                affected, acted, how = True, "duplicate" in kinds, "duplicate"
            elif f.kind == "OutOfOrder":
                affected, acted, how = reordered, bool({"reordered", "late"} & set(kinds)), "ordering"
            else:
                continue
            if not affected:
                continue
            o.affected += 1
            if acted:
                o.acted_on += 1
                if o.detected_at is None:
                    o.detected_at = p.arrival - EPOCH_BASE
                    o.detection = how


def _iso_with_offset(epoch: float, offset: str) -> str:
    sign = -1 if offset.startswith("-") else 1
    hh, mm = offset.lstrip("+-").split(":")
    tz = timezone(sign * timedelta(hours=int(hh), minutes=int(mm)))
    return datetime.fromtimestamp(epoch, tz=tz).isoformat(timespec="milliseconds")


def run_scenario(scenario: Scenario | Mapping, keep_messages: bool = False) -> ScenarioResult:
    if not isinstance(scenario, Scenario):
        scenario = Scenario.from_dict(scenario)
    return Simulation(scenario, keep_messages).run()
