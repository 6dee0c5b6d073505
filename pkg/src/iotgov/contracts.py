"""Versioned data contracts and the registry that runs their lifecycle."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

from .errors import (
    IllegalTransition,
    IncompatibleContract,
    MalformedContract,
    NoEnforcedVersion,
    NonMonotonicVersion,
    UnknownCanonicalConcept,
    UnknownContract,
)
from .mapping import UNITS, CanonicalBaseline
from .schema import Bump, CompatibilityMode, StructSchema, check_compatibility, classify_schema_change

CLASSIFICATIONS = ("Public", "Internal", "Confidential", "Restricted")
RACI_ROLES = ("Responsible", "Accountable", "Consulted", "Informed")
DEFAULT_GRACE_S = 30 * 86400.0


def parse_semver(text: str) -> tuple[int, int, int]:
    parts = str(text).split(".")
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise MalformedContract(f"version {text!r} is not major.minor.patch")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def required_bump(old_version: str, new_version: str) -> Bump | None:
    """Bump actually taken between two versions; None when not increasing."""
    a, b = parse_semver(old_version), parse_semver(new_version)
    if b <= a:
        return None
    if b[0] > a[0]:
        return Bump.MAJOR
    if b[1] > a[1]:
        return Bump.MINOR
    return Bump.PATCH


class ContractState(str, Enum):
    DEFINITION = "Definition"
    REVIEW = "Review"
    DEPLOYMENT = "Deployment"
    ENFORCEMENT = "Enforcement"
    EVOLUTION = "Evolution"
    RETIREMENT = "Retirement"


CONTRACT_TRANSITIONS = {
    ContractState.DEFINITION: {ContractState.REVIEW},
    ContractState.REVIEW: {ContractState.DEPLOYMENT},
    ContractState.DEPLOYMENT: {ContractState.ENFORCEMENT},
    ContractState.ENFORCEMENT: {ContractState.EVOLUTION, ContractState.RETIREMENT},
    ContractState.EVOLUTION: {ContractState.REVIEW},
    ContractState.RETIREMENT: set(),
}


@dataclass(frozen=True)
class FieldSemantics:
    unit: str | None = None
    precision: float | None = None
    concept: str | None = None
    pii: bool = False

    def to_dict(self) -> dict:
        return {"unit": self.unit, "precision": self.precision, "concept": self.concept, "pii": self.pii}


@dataclass(frozen=True)
class Temporal:
    timestamp_semantics: str = "event"
    sample_rate_hz: float = 1.0
    max_drift_s: float = 60.0
    ordering: str = "none"  # none | per-device

    def to_dict(self) -> dict:
        return {
            "timestamp_semantics": self.timestamp_semantics,
            "sample_rate_hz": self.sample_rate_hz,
            "max_drift_s": self.max_drift_s,
            "ordering": self.ordering,
        }


@dataclass(frozen=True)
class Steward:
    name: str
    role: str

    def to_dict(self) -> dict:
        return {"name": self.name, "role": self.role}


@dataclass(frozen=True)
class Ownership:
    domain: str
    producer: str
    stewards: tuple[Steward, ...] = ()

    def with_role(self, role: str) -> list[str]:
        return [s.name for s in self.stewards if s.role == role]

    def to_dict(self) -> dict:
        return {"domain": self.domain, "producer": self.producer, "stewards": [s.to_dict() for s in self.stewards]}


@dataclass(frozen=True)
class QualitySla:
    """Fractions are minimum scores; max_deviation and max_age_s bound individual samples."""

    completeness: float
    consistency: float = 0.0
    max_deviation: float | None = None
    max_age_s: float | None = None
    accuracy: float | None = None
    freshness: float | None = None
    validity: float | None = None

    def thresholds(self) -> dict[str, float]:
        out = {"completeness": self.completeness, "consistency": self.consistency}
        for name in ("accuracy", "freshness", "validity"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass(frozen=True)
class DataContract:
    contract_id: str
    version: str
    schema: StructSchema
    compatibility: CompatibilityMode
    semantics: Mapping[str, FieldSemantics] = field(default_factory=dict)
    temporal: Temporal = Temporal()
    ownership: Ownership = Ownership("unassigned", "unassigned")
    quality_sla: QualitySla | None = None
    classification: str = "Internal"
    migration_timeline: str | None = None

    def __post_init__(self):
        self.check()

    @property
    def semver(self) -> tuple[int, int, int]:
        return parse_semver(self.version)

    def check(self) -> None:
        parse_semver(self.version)
        if not isinstance(self.compatibility, CompatibilityMode):
            raise MalformedContract("compatibility mode must be declared explicitly")
        for name, sem in self.semantics.items():
            if self.schema.field_at(name) is None:
                raise MalformedContract(f"semantics reference unknown field {name!r}")
            if sem.unit is not None and sem.unit not in UNITS:
                raise MalformedContract(f"unknown unit {sem.unit!r} on {name!r}")
            if sem.precision is not None and sem.precision <= 0:
                raise MalformedContract(f"precision on {name!r} must be positive")
        if self.temporal.sample_rate_hz <= 0:
            raise MalformedContract("sample rate must be > 0")
        if self.temporal.max_drift_s < 0:
            raise MalformedContract("max drift must be >= 0")
        if self.temporal.ordering not in ("none", "per-device"):
            raise MalformedContract(f"unknown ordering {self.temporal.ordering!r}")
        if self.temporal.timestamp_semantics not in ("event", "ingestion"):
            raise MalformedContract(f"unknown timestamp semantics {self.temporal.timestamp_semantics!r}")
        if self.classification not in CLASSIFICATIONS:
            raise MalformedContract(f"classification {self.classification!r} outside the taxonomy")
        for steward in self.ownership.stewards:
            if steward.role not in RACI_ROLES:
                raise MalformedContract(f"steward {steward.name!r} has non-RACI role {steward.role!r}")
        sla = self.quality_sla
        if sla is not None:
            for name in ("completeness", "consistency", "accuracy", "freshness", "validity"):
                value = getattr(sla, name)
                if value is not None and not 0.0 <= value <= 1.0:
                    raise MalformedContract(f"SLA {name} must lie in [0, 1]")
            for name in ("max_deviation", "max_age_s"):
                value = getattr(sla, name)
                if value is not None and value < 0:
                    raise MalformedContract(f"SLA {name} must be >= 0")
            if not self.ownership.with_role("Responsible"):
                raise MalformedContract("an SLA needs a Responsible steward to route alerts to")

    def concepts(self) -> list[str]:
        return [s.concept for s in self.semantics.values() if s.concept]

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "contract_id": self.contract_id,
            "version": self.version,
            "schema": self.schema.to_dict(),
            "semantics": {k: v.to_dict() for k, v in self.semantics.items()},
            "temporal": self.temporal.to_dict(),
            "ownership": self.ownership.to_dict(),
            "compatibility": self.compatibility.value,
            "classification": self.classification,
        }
        if self.quality_sla is not None:
            out["quality_sla"] = self.quality_sla.to_dict()
        if self.migration_timeline:
            out["migration_timeline"] = self.migration_timeline
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: Mapping) -> "DataContract":
        try:
            if "compatibility" not in data:
                raise MalformedContract("compatibility mode must be declared explicitly")
            try:
                mode = CompatibilityMode.parse(data["compatibility"])
            except ValueError as exc:
                raise MalformedContract(str(exc)) from None
            sla = data.get("quality_sla")
            own = data.get("ownership") or {}
            return cls(
                contract_id=data["contract_id"],
                version=str(data["version"]),
                schema=StructSchema.from_dict(data["schema"]),
                compatibility=mode,
                semantics={k: FieldSemantics(**v) for k, v in (data.get("semantics") or {}).items()},
                temporal=Temporal(**(data.get("temporal") or {})),
                ownership=Ownership(
                    domain=own.get("domain", "unassigned"),
                    producer=own.get("producer", "unassigned"),
                    stewards=tuple(Steward(**s) for s in own.get("stewards", [])),
                ),
                quality_sla=QualitySla(**sla) if sla is not None else None,
                classification=data.get("classification", "Internal"),
                migration_timeline=data.get("migration_timeline"),
            )
        except (KeyError, TypeError) as exc:
            raise MalformedContract(f"malformed contract document: {exc}") from None

    @classmethod
    def loads(cls, text: str) -> "DataContract":
        return cls.from_dict(json.loads(text))


@dataclass
class ContractRecord:
    contract: DataContract
    state: ContractState = ContractState.DEFINITION
    approved: bool = False
    retired_at: float | None = None
    history: list[tuple[str, float]] = field(default_factory=list)


@dataclass(frozen=True)
class Registration:
    contract_id: str
    version: str
    state: ContractState


@dataclass(frozen=True)
class Subscription:
    consumer: str
    contract_id: str
    version: str


class ContractRegistry:
    """Append-only store of contract versions keyed by contract id."""

    def __init__(self, baseline: CanonicalBaseline | None = None, grace_period_s: float = DEFAULT_GRACE_S):
        self.baseline = baseline or CanonicalBaseline()
        self.grace_period_s = grace_period_s
        self._versions: dict[str, list[ContractRecord]] = {}
        self._subscriptions: list[Subscription] = []
        self._lock = threading.RLock()

    def __contains__(self, contract_id: str) -> bool:
        return contract_id in self._versions

    def ids(self) -> list[str]:
        return sorted(self._versions)

    def register_contract(self, contract: DataContract, now: float = 0.0) -> Registration:
        contract.check()
        for concept in contract.concepts():
            if not self.baseline.has(concept):
                raise UnknownCanonicalConcept(concept)
        with self._lock:
            history = self._versions.setdefault(contract.contract_id, [])
            if history and contract.semver <= history[-1].contract.semver:
                raise NonMonotonicVersion(
                    f"{contract.contract_id} {contract.version} <= latest {history[-1].contract.version}"
                )
            record = ContractRecord(contract, history=[(ContractState.DEFINITION.value, now)])
            history.append(record)
            return Registration(contract.contract_id, contract.version, record.state)

    def versions(self, contract_id: str) -> list[ContractRecord]:
        try:
            return self._versions[contract_id]
        except KeyError:
            raise UnknownContract(contract_id) from None

    def record(self, contract_id: str, version: str | None = None) -> ContractRecord:
        history = self.versions(contract_id)
        if version is None:
            return history[-1]
        for rec in history:
            if rec.contract.version == version:
                return rec
        raise UnknownContract(f"{contract_id}@{version}")

    def approve(self, contract_id: str, version: str | None = None) -> ContractRecord:
        """Asynchronous review sign-off; Review -> Deployment needs it."""
        rec = self.record(contract_id, version)
        rec.approved = True
        return rec

    def transition_contract_state(
        self,
        contract_id: str,
        target: ContractState | str,
        version: str | None = None,
        now: float = 0.0,
    ) -> ContractState:
        target = ContractState(target)
        with self._lock:
            rec = self.record(contract_id, version)
            if rec.state == target:
                return rec.state
            if target not in CONTRACT_TRANSITIONS[rec.state]:
                raise IllegalTransition(f"{rec.state.value} -> {target.value}")
            if target == ContractState.DEPLOYMENT:
                if not rec.approved:
                    raise IllegalTransition("review not yet approved")
                self._check_against_predecessor(rec)
            if target == ContractState.REVIEW:
                rec.approved = False
            if target == ContractState.RETIREMENT:
                rec.retired_at = now
            rec.state = target
            rec.history.append((target.value, now))
            return rec.state

    def _check_against_predecessor(self, rec: ContractRecord) -> None:
        history = self.versions(rec.contract.contract_id)
        idx = history.index(rec)
        if idx == 0:
            return
        prev = history[idx - 1].contract
        new = rec.contract
        needed = classify_schema_change(prev.schema, new.schema)
        taken = required_bump(prev.version, new.version)
        if taken == Bump.MAJOR:
            return
        if taken is None or needed > taken:
            raise IncompatibleContract(f"{new.contract_id}: change needs a {needed} bump, got {prev.version} -> {new.version}")
        report = check_compatibility(prev.schema, new.schema, new.compatibility)
        if not report.compatible:
            raise IncompatibleContract(f"{new.contract_id} {new.version} breaks {new.compatibility.value}", report.violations)

    def enforcing(self, rec: ContractRecord, now: float) -> bool:
        if rec.state == ContractState.ENFORCEMENT:
            return True
        return (
            rec.state == ContractState.RETIREMENT
            and rec.retired_at is not None
            and now < rec.retired_at + self.grace_period_s
        )

    def resolve_contract(self, contract_id: str, version: str | None = None) -> DataContract:
        """Exact version if given, otherwise the newest version in Enforcement."""
        if version is not None:
            return self.record(contract_id, version).contract
        for rec in reversed(self.versions(contract_id)):
            if rec.state == ContractState.ENFORCEMENT:
                return rec.contract
        raise NoEnforcedVersion(contract_id)

    def active_contract(self, contract_id: str, now: float) -> DataContract:
        """Contract used for validation: enforced, else retired but still within grace."""
        history = self.versions(contract_id)
        for rec in reversed(history):
            if rec.state == ContractState.ENFORCEMENT:
                return rec.contract
        for rec in reversed(history):
            if self.enforcing(rec, now):
                return rec.contract
        raise NoEnforcedVersion(contract_id)

    def state(self, contract_id: str, version: str | None = None) -> ContractState:
        return self.record(contract_id, version).state

    def subscribe(self, consumer: str, contract_id: str, version: str) -> Subscription:
        self.record(contract_id, version)
        sub = Subscription(consumer, contract_id, version)
        if sub not in self._subscriptions:
            self._subscriptions.append(sub)
        return sub

    def impact_analysis(self, contract_id: str) -> list[dict]:
        self.versions(contract_id)
        out = []
        for sub in self._subscriptions:
            if sub.contract_id != contract_id:
                continue
            state = self.state(contract_id, sub.version)
            out.append(
                {
                    "consumer": sub.consumer,
                    "version": sub.version,
                    "state": state.value,
                    "deprecated": state == ContractState.RETIREMENT,
                }
            )
        return sorted(out, key=lambda d: (d["consumer"], d["version"]))

    # -- persistence -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "grace_period_s": self.grace_period_s,
            "contracts": [
                {
                    "contract": rec.contract.to_dict(),
                    "state": rec.state.value,
                    "approved": rec.approved,
                    "retired_at": rec.retired_at,
                    "history": [list(h) for h in rec.history],
                }
                for cid in sorted(self._versions)
                for rec in self._versions[cid]
            ],
            "subscriptions": [s.__dict__ for s in self._subscriptions],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: Mapping, baseline: CanonicalBaseline | None = None) -> "ContractRegistry":
        reg = cls(baseline, float(data.get("grace_period_s", DEFAULT_GRACE_S)))
        for item in data.get("contracts", []):
            contract = DataContract.from_dict(item["contract"])
            reg._versions.setdefault(contract.contract_id, []).append(
                ContractRecord(
                    contract,
                    ContractState(item.get("state", "Definition")),
                    bool(item.get("approved", False)),
                    item.get("retired_at"),
                    [tuple(h) for h in item.get("history", [])],
                )
            )
        for sub in data.get("subscriptions", []):
            reg._subscriptions.append(Subscription(**sub))
        return reg

    def promote(self, contract_id: str, version: str | None = None, now: float = 0.0) -> ContractState:
        """Definition -> Review -> (approve) -> Deployment -> Enforcement in one go."""
        rec = self.record(contract_id, version)
        version = rec.contract.version
        if rec.state in (ContractState.DEFINITION, ContractState.EVOLUTION):
            self.transition_contract_state(contract_id, ContractState.REVIEW, version, now)
        if rec.state == ContractState.REVIEW:
            self.approve(contract_id, version)
            self.transition_contract_state(contract_id, ContractState.DEPLOYMENT, version, now)
        if rec.state == ContractState.DEPLOYMENT:
            self.transition_contract_state(contract_id, ContractState.ENFORCEMENT, version, now)
        return rec.state
