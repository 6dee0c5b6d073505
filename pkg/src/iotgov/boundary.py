"""Enforcement at the four boundaries: ingestion, publication, access and external sharing."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .assets import AssetRegistry
from .audit import AuditLog
from .contracts import ContractRegistry, ContractState, DataContract, required_bump
from .errors import (
    AccessDenied,
    BadCredential,
    GovernanceError,
    IncompatibleContract,
    MissingSla,
    MissingPurpose,
    NoEnforcedVersion,
    ResidencyViolation,
    SlaFailure,
    UnknownContract,
    UnknownDevice,
    UnknownJurisdiction,
    UnknownQuarantineId,
    UnknownSourceContract,
    UnparseableTimestamp,
)
from .mapping import MappingSet, RawSignal, ReorderWindow, apply_mapping, to_epoch
from .policy.ast import Aggregate, Mask
from .policy.engine import AttributeRequest, Decision, EffectivePolicy, evaluate_request
from .privacy import PartitionStore, TokenVault, aggregate_records, region_of, residency_restricted
from .quality import Observation, QualityMonitor, evaluate_sla, score_window
from .schema import Bump, check_compatibility, classify_schema_change, is_valid, validate_payload

SEVERITY = {
    "admission": "Critical",
    "unmapped_signal": "Critical",
    "no_contract": "Critical",
    "missing_required": "Critical",
    "type_mismatch": "Critical",
    "unknown_field": "Critical",
    "referential": "Critical",
    "timestamp": "Critical",
    "drift_severe": "Critical",
    "policy": "Critical",
    "residency": "Critical",
    "internal_error": "Critical",
    "out_of_range": "Warning",
    "null_value": "Warning",
    "drift": "Warning",
    "duplicate": "Warning",
    "late": "Warning",
    "reordered": "Informational",
    "deprecated_contract": "Informational",
}
DISPOSITIONS = ("Accept", "AcceptWithWarnings", "Quarantine", "Reject")


@dataclass(frozen=True)
class TelemetryMessage:
    device_id: str
    signal: str
    payload: Mapping[str, Any]
    timestamp: Any
    sequence: int
    credential: str = ""
    asset_ref: str | None = None

    @property
    def ref(self) -> str:
        return f"{self.device_id}#{self.sequence}"

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "signal": self.signal,
            "payload": dict(self.payload),
            "timestamp": self.timestamp,
            "sequence": self.sequence,
            "credential": self.credential,
            "asset_ref": self.asset_ref,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "TelemetryMessage":
        return cls(
            data["device_id"], data["signal"], dict(data.get("payload") or {}), data.get("timestamp"),
            int(data.get("sequence", 0)), data.get("credential", ""), data.get("asset_ref"),
        )


@dataclass(frozen=True)
class ReportViolation:
    field: str
    kind: str
    severity: str
    detail: str = ""

    def to_dict(self) -> dict:
        return {"field": self.field, "kind": self.kind, "severity": self.severity, "detail": self.detail}


@dataclass(frozen=True)
class ValidationReport:
    message: str
    contract_id: str | None
    contract_version: str | None
    violations: tuple[ReportViolation, ...]
    disposition: str

    def worst(self) -> str | None:
        for level in ("Critical", "Warning", "Informational"):
            if any(v.severity == level for v in self.violations):
                return level
        return None

    def to_dict(self) -> dict:
        return {
            "message": self.message,
            "contract": self.contract_id,
            "version": self.contract_version,
            "violations": [v.to_dict() for v in self.violations],
            "disposition": self.disposition,
        }


def disposition_for(violations: Sequence[ReportViolation], rejected: bool = False) -> str:
    if rejected:
        return "Reject"
    severities = {v.severity for v in violations}
    if "Critical" in severities:
        return "Quarantine"
    if "Warning" in severities:
        return "AcceptWithWarnings"
    return "Accept"


@dataclass
class IngestResult:
    disposition: str
    report: ValidationReport
    ack: bool
    measurement: dict | None = None
    quarantine_id: str | None = None
    summary: str = ""


@dataclass
class QuarantineItem:
    id: str
    message: TelemetryMessage
    report: ValidationReport
    quarantined_at: float
    status: str = "open"  # open | requeued | resolved
    note: str | None = None
    resolved_at: float | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "message": self.message.to_dict(),
            "report": self.report.to_dict(),
            "quarantined_at": self.quarantined_at,
            "status": self.status,
            "note": self.note,
            "resolved_at": self.resolved_at,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "QuarantineItem":
        rep = data["report"]
        report = ValidationReport(
            rep["message"], rep.get("contract"), rep.get("version"),
            tuple(ReportViolation(**v) for v in rep.get("violations", [])), rep["disposition"],
        )
        return cls(
            data["id"], TelemetryMessage.from_dict(data["message"]), report, data["quarantined_at"],
            data.get("status", "open"), data.get("note"), data.get("resolved_at"),
        )


class RecordStore:
    """Append-only list of dict records, optionally mirrored to a JSON-lines file."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        if self.path is not None and self.path.exists():
            self.records = [json.loads(ln) for ln in self.path.read_text(encoding="utf-8").splitlines() if ln.strip()]

    def append(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def rewrite(self) -> None:
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records), encoding="utf-8")

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class ProductDefinition:
    product_id: str
    contract: DataContract
    sources: Sequence[str]
    steward: str
    transform: Callable[[dict], dict] | None = None
    window: tuple[float, float] | None = None


@dataclass
class PublicationResult:
    product_id: str
    version: str
    status: str
    scores: Mapping[str, float]
    required_bump: str | None = None


@dataclass
class AccessResult:
    decision: Decision
    payload: Any = None
    audit_index: int | None = None


@dataclass
class ExportResult:
    decision: Decision
    payload: Any = None
    destination: str = ""
    audit_index: int | None = None


def default_product_transform(measurement: Mapping) -> dict:
    return {
        "asset": measurement.get("asset_ref"),
        "concept": measurement.get("concept"),
        "value": measurement.get("value"),
        "unit": measurement.get("unit"),
        "event_time": measurement.get("event_time"),
    }


class Gateway:
    """Boundary enforcement point wired to the registries, policies and stores."""

    def __init__(
        self,
        assets: AssetRegistry,
        contracts: ContractRegistry,
        mappings: MappingSet,
        policy: EffectivePolicy | None = None,
        ingest_policy: EffectivePolicy | None = None,
        audit: AuditLog | None = None,
        partitions: PartitionStore | None = None,
        monitor: QualityMonitor | None = None,
        canonical_path: str | Path | None = None,
        quarantine_path: str | Path | None = None,
        reorder_window_s: float = 10.0,
        vault: TokenVault | None = None,
        keep_reports: bool = True,
    ):
        self.assets = assets
        self.contracts = contracts
        self.mappings = mappings
        self.policy = policy
        self.ingest_policy = ingest_policy
        self.audit = audit if audit is not None else AuditLog()
        self.partitions = partitions if partitions is not None else PartitionStore()
        self.monitor = monitor
        self.canonical = RecordStore(canonical_path)
        self.quarantine_path = Path(quarantine_path) if quarantine_path is not None else None
        self.quarantine: dict[str, QuarantineItem] = {}
        if self.quarantine_path is not None and self.quarantine_path.exists():
            for ln in self.quarantine_path.read_text(encoding="utf-8").splitlines():
                if ln.strip():
                    item = QuarantineItem.from_dict(json.loads(ln))
                    self.quarantine[item.id] = item
        self.reorder = ReorderWindow(reorder_window_s)
        self.vault = vault if vault is not None else TokenVault(authorizer=self._may_detokenize)
        self.notifications: list[dict] = []
        self.reports: list[ValidationReport] = []
        self.keep_reports = keep_reports
        self.counts = {d: 0 for d in DISPOSITIONS}
        self.severity_counts = {"Critical": 0, "Warning": 0, "Informational": 0}
        self.catalog: dict[str, dict] = {}
        self.pending: list[dict] = []
        self.stream_devices: dict[str, set[str]] = {}
        self._seen: set[tuple[str, int]] = set()
        self._attr_cache: dict[str, dict] = {}
        self._lock = threading.RLock()
        self.clock = 0.0

    # -- helpers -----------------------------------------------------------------
    def _attributes(self, asset_ref: str) -> dict:
        cached = self._attr_cache.get(asset_ref)
        if cached is None:
            cached = self.assets.resolve_effective_attributes(asset_ref)
            self._attr_cache[asset_ref] = cached
        return cached

    def invalidate_attributes(self) -> None:
        self._attr_cache.clear()

    def notify(self, to: str, subject: str, detail: Any = None, at: float | None = None) -> None:
        self.notifications.append({"to": to, "subject": subject, "detail": detail, "at": self.clock if at is None else at})

    def _steward_for(self, contract: DataContract | None) -> str:
        if contract is not None:
            responsible = contract.ownership.with_role("Responsible")
            if responsible:
                return responsible[0]
        return "governance-office"

    def _persist_quarantine(self) -> None:
        if self.quarantine_path is not None:
            self.quarantine_path.parent.mkdir(parents=True, exist_ok=True)
            self.quarantine_path.write_text(
                "".join(json.dumps(q.to_dict(), sort_keys=True) + "\n" for q in self.quarantine.values()),
                encoding="utf-8",
            )

    # -- ingestion ---------------------------------------------------------------
    def ingest_message(self, msg: TelemetryMessage, now: float) -> IngestResult:
        """Run one message through every ingestion step; the outcome is never an exception."""
        with self._lock:
            self.clock = now
            try:
                result = self._ingest(msg, now)
            except Exception as exc:  # fail closed on anything unexpected
                violations = (ReportViolation("", "internal_error", "Critical", f"{type(exc).__name__}: {exc}"),)
                report = ValidationReport(msg.ref, None, None, violations, "Quarantine")
                result = self._quarantine(msg, report, None, now)
            self._account(result, msg, now)
            return result

    def _account(self, result: IngestResult, msg: TelemetryMessage, now: float) -> None:
        self.counts[result.disposition] += 1
        for v in result.report.violations:
            self.severity_counts[v.severity] += 1
        if self.keep_reports:
            self.reports.append(result.report)
        kinds = sorted({v.kind for v in result.report.violations})
        self.audit.record_audit(
            timestamp=now,
            actor=msg.device_id or "unknown-device",
            action="ingest",
            resource=f"{result.report.contract_id or '-'}:{msg.ref}",
            outcome=result.disposition,
            reason=",".join(kinds) or "ok",
            details={"quarantine_id": result.quarantine_id} if result.quarantine_id else None,
        )

    def _reject(self, msg: TelemetryMessage, detail: str) -> IngestResult:
        report = ValidationReport(msg.ref, None, None, (ReportViolation("device_id", "admission", "Critical", detail),), "Reject")
        return IngestResult("Reject", report, False, summary=detail)

    def _quarantine(self, msg: TelemetryMessage, report: ValidationReport, contract: DataContract | None, now: float) -> IngestResult:
        qid = f"q-{len(self.quarantine) + 1:06d}"
        self.quarantine[qid] = QuarantineItem(qid, msg, report, now)
        if self.quarantine_path is not None:
            self.quarantine_path.parent.mkdir(parents=True, exist_ok=True)
            with self.quarantine_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(self.quarantine[qid].to_dict(), sort_keys=True) + "\n")
        critical = sorted({v.kind for v in report.violations if v.severity == "Critical"})
        summary = f"quarantined: {', '.join(critical)}"
        self.notify(self._steward_for(contract), "quarantine", {"id": qid, "message": msg.ref, "kinds": critical}, now)
        return IngestResult("Quarantine", report, False, quarantine_id=qid, summary=summary)

    def _ingest(self, msg: TelemetryMessage, now: float) -> IngestResult:
        # 1. device admission
        if not msg.device_id:
            return self._reject(msg, "message carries no device id")
        try:
            admitted = self.assets.check_device_admission(msg.device_id, msg.credential)
        except UnknownDevice:
            return self._reject(msg, "unknown device")
        except BadCredential:
            return self._reject(msg, "credential mismatch")
        if not admitted:
            state = self.assets.device(msg.device_id).state
            return self._reject(msg, f"device is {state.value}")
        device = self.assets.device(msg.device_id)

        violations: list[ReportViolation] = []

        def flag(field_name: str, kind: str, detail: str = "") -> None:
            violations.append(ReportViolation(field_name, kind, SEVERITY[kind], detail))

        # 2. contract fetch through the signal's mapping
        if msg.signal not in self.mappings:
            flag("signal", "unmapped_signal", msg.signal)
            return self._quarantine(msg, ValidationReport(msg.ref, None, None, tuple(violations), "Quarantine"), None, now)
        mapping = self.mappings.for_signal(msg.signal)
        try:
            if mapping.contract_id is None:
                raise UnknownContract(f"mapping {mapping.tag} names no contract")
            contract = self.contracts.active_contract(mapping.contract_id, now)
        except (UnknownContract, NoEnforcedVersion) as exc:
            flag("", "no_contract", str(exc))
            report = ValidationReport(msg.ref, mapping.contract_id, None, tuple(violations), "Quarantine")
            return self._quarantine(msg, report, None, now)
        if self.contracts.state(contract.contract_id, contract.version) == ContractState.RETIREMENT:
            flag("", "deprecated_contract", f"{contract.contract_id} {contract.version} is retired")

        self.stream_devices.setdefault(contract.contract_id, set()).add(msg.device_id)

        # 3-4. schema and range validation
        for v in validate_payload(contract.schema, msg.payload):
            flag(v.field, v.kind, v.detail)

        # 5. referential integrity
        asset_ref = msg.asset_ref or device.asset_ref
        referential_ok = asset_ref in self.assets
        if not referential_ok:
            flag("asset_ref", "referential", f"asset {asset_ref!r} is not registered")

        # timestamps and ordering
        event_time = now
        try:
            event_time = to_epoch(msg.timestamp, mapping.timestamp_format, mapping.utc_offset)
            drift = abs(event_time - now)
            allowed = contract.temporal.max_drift_s + mapping.max_skew_s
            if drift > 2 * allowed:
                flag("timestamp", "drift_severe", f"drift {drift:.3f}s beyond twice {allowed}s")
            elif drift > allowed:
                flag("timestamp", "drift", f"drift {drift:.3f}s over {allowed}s")
        except UnparseableTimestamp as exc:
            flag("timestamp", "timestamp", str(exc))
        key = (msg.device_id, msg.sequence)
        if key in self._seen:
            flag("sequence", "duplicate", f"sequence {msg.sequence} already seen")
        self._seen.add(key)
        if contract.temporal.ordering == "per-device":
            order = self.reorder.observe(msg.device_id, event_time)
            if order != "in_order":
                flag("timestamp", order)

        structural_ok = not any(v.severity == "Critical" for v in violations)
        value = msg.payload.get(mapping.value_field)
        if self.monitor is not None:
            numeric = value if isinstance(value, (int, float)) and not isinstance(value, bool) else None
            self.monitor.observe(
                contract.contract_id,
                Observation(msg.device_id, event_time, now, numeric, structural_ok, referential_ok),
            )

        if not structural_ok:
            report = ValidationReport(msg.ref, contract.contract_id, contract.version, tuple(violations), "Quarantine")
            return self._quarantine(msg, report, contract, now)

        attrs = self._attributes(asset_ref)

        # 6. policy evaluation (Deny quarantines with the reason)
        if self.ingest_policy is not None:
            request = AttributeRequest(
                subject={"device_id": msg.device_id, "state": device.state.value, "role": "device"},
                resource={"classification": contract.classification, "contract": contract.contract_id, "signal": msg.signal},
                env={"timestamp": now, "channel": "ingest", "purpose": "ingest"},
                asset=attrs,
                action="ingest",
            )
            decision = evaluate_request(self.ingest_policy, request)
            if decision.outcome != "Allow":
                flag("", "policy", f"{decision.outcome}: {'; '.join(decision.reasons)}")
                report = ValidationReport(msg.ref, contract.contract_id, contract.version, tuple(violations), "Quarantine")
                return self._quarantine(msg, report, contract, now)

        # canonical mapping
        raw = RawSignal(msg.signal, value, mapping.source_unit, msg.timestamp, msg.device_id, asset_ref)
        measurement = apply_mapping(raw, mapping, self.mappings.baseline, event_time=event_time, ingestion_time=now)

        # residency partition
        try:
            region = region_of(attrs.get("jurisdiction"))
        except UnknownJurisdiction as exc:
            flag("asset.jurisdiction", "residency", str(exc))
            report = ValidationReport(msg.ref, contract.contract_id, contract.version, tuple(violations), "Quarantine")
            return self._quarantine(msg, report, contract, now)

        # 7. enrich and store
        disposition = disposition_for(violations)
        record = measurement.to_dict()
        record.update(
            message=msg.ref,
            contract=f"{contract.contract_id}@{contract.version}",
            region=region,
            lineage_assets=list(attrs.get("lineage", [])),
            disposition=disposition,
        )
        self.canonical.append(record)
        restricted = residency_restricted(contract.classification, attrs)
        self.partitions.place(
            msg.ref, record, region, restricted,
            {"contract": contract.contract_id, "asset_ref": asset_ref, "event_time": event_time},
        )
        report = ValidationReport(msg.ref, contract.contract_id, contract.version, tuple(violations), disposition)
        return IngestResult(disposition, report, True, measurement=record)

    # -- quarantine ----------------------------------------------------------------
    def manage_quarantine(self, command: str, item_id: str | None = None, note: str | None = None, now: float | None = None):
        now = self.clock if now is None else now
        if command == "list":
            return [q for q in self.quarantine.values() if q.status == "open"]
        if item_id not in self.quarantine:
            raise UnknownQuarantineId(str(item_id))
        item = self.quarantine[item_id]
        if command == "requeue":
            item.status = "requeued"
            item.resolved_at = now
            self._seen.discard((item.message.device_id, item.message.sequence))
            self._persist_quarantine()
            result = self.ingest_message(item.message, now)
            return result
        if command == "resolve":
            item.status = "resolved"
            item.note = note or ""
            item.resolved_at = now
            self._persist_quarantine()
            self.audit.record_audit(
                timestamp=now, actor="steward", action="quarantine", resource=item_id,
                outcome="Resolved", reason=item.note,
            )
            return item
        raise ValueError(f"unknown quarantine command {command!r}")

    # -- publication -----------------------------------------------------------------
    def semver_gate(self, product: DataContract) -> Bump | None:
        """Raise unless the version step covers the schema change to the prior product version."""
        if product.contract_id not in self.contracts:
            return None
        prior = self.contracts.versions(product.contract_id)[-1].contract
        needed = classify_schema_change(prior.schema, product.schema)
        taken = required_bump(prior.version, product.version)
        if taken is None:
            raise IncompatibleContract(f"{product.contract_id}: version {product.version} does not follow {prior.version}")
        if taken == Bump.MAJOR:
            return needed
        if needed > taken:
            raise IncompatibleContract(
                f"{product.contract_id}: change needs a {needed} bump, {prior.version} -> {product.version} is {taken}",
                [f"required bump {needed}"],
            )
        report = check_compatibility(prior.schema, product.schema, product.compatibility)
        if not report.compatible:
            raise IncompatibleContract(f"{product.contract_id} breaks {product.compatibility.value}", report.violations)
        return needed

    def publish_product(self, definition: ProductDefinition, now: float | None = None) -> PublicationResult:
        now = self.clock if now is None else now
        product = definition.contract
        if not definition.steward:
            raise AccessDenied("publishing a product needs a domain steward identity")
        for src in definition.sources:
            try:
                self.contracts.resolve_contract(src)
            except UnknownContract:
                raise UnknownSourceContract(src) from None
            except NoEnforcedVersion:
                raise UnknownSourceContract(f"{src} has no version in Enforcement") from None
        try:
            needed = self.semver_gate(product)
        except IncompatibleContract as exc:
            self.audit.record_audit(timestamp=now, actor=definition.steward, action="publish",
                                    resource=f"{product.contract_id}@{product.version}", outcome="Blocked",
                                    reason=str(exc))
            raise
        if product.quality_sla is None:
            raise MissingSla(product.contract_id)

        transform = definition.transform or default_product_transform
        sources = set(definition.sources)
        rows = [r for r in self.canonical.records if r["contract"].split("@")[0] in sources]
        observations = []
        for r in rows:
            out = transform(r)
            observations.append(
                Observation(
                    r.get("device_id") or r.get("asset_ref") or "",
                    r["event_time"], r["ingestion_time"],
                    r.get("value"), is_valid(product.schema, out), r.get("asset_ref") in self.assets,
                )
            )
        keys = sorted({d for src in sources for d in self.stream_devices.get(src, ())})
        if definition.window is not None:
            window = definition.window
        elif observations:
            rate = product.temporal.sample_rate_hz
            lo = min(o.event_time for o in observations)
            hi = max(o.event_time for o in observations)
            window = (lo, lo + max(1.0 / rate, (int((hi - lo) * rate) + 1) / rate))
        else:
            window = (now, now + 1.0)
        score = score_window(product.contract_id, observations, product, window, expected_keys=keys or None)
        breaches, alerts = evaluate_sla(product, score, detected_at=now)
        if breaches:
            for alert in alerts:
                self.notify(alert["to"], "publication blocked", alert, now)
            self.audit.record_audit(timestamp=now, actor=definition.steward, action="publish",
                                    resource=f"{product.contract_id}@{product.version}", outcome="Blocked",
                                    reason="; ".join(a["message"] for a in alerts))
            raise SlaFailure(f"{product.contract_id} fails its SLA on the sampled output", breaches)

        self.contracts.register_contract(product, now)
        self.contracts.promote(product.contract_id, product.version, now)
        for src in definition.sources:
            self.contracts.subscribe(product.contract_id, src, self.contracts.resolve_contract(src).version)
        self.catalog[product.contract_id] = {
            "version": product.version,
            "sources": list(definition.sources),
            "steward": definition.steward,
            "classification": product.classification,
            "scores": dict(score.dimensions),
        }
        self.audit.record_audit(timestamp=now, actor=definition.steward, action="publish",
                                resource=f"{product.contract_id}@{product.version}", outcome="Registered",
                                reason="sla met")
        return PublicationResult(product.contract_id, product.version, "registered", dict(score.dimensions),
                                 str(needed) if needed is not None else None)

    # -- access ------------------------------------------------------------------------
    def _may_detokenize(self, requester: Mapping, scope: str) -> bool:
        if self.policy is None:
            return False
        request = AttributeRequest(
            subject=dict(requester),
            resource={"classification": "Restricted", "scope": scope},
            env={"timestamp": self.clock, "purpose": requester.get("purpose", "detokenize"), "channel": "vault"},
            action="detokenize",
        )
        return evaluate_request(self.policy, request).allowed

    def _apply_obligations(self, decision: Decision, payload: Any, scope: str) -> Any:
        obligations = decision.obligation_objects(self.policy) if self.policy is not None else []
        out = payload
        if scope not in self.vault.scopes():
            self.vault.create_scope(scope)
        for ob in obligations:
            if isinstance(ob, Mask):
                name = ob.path.parts[-1]
                rows = out if isinstance(out, list) else [out]
                masked = []
                for row in rows:
                    row = dict(row)
                    if name in row and row[name] is not None:
                        row[name] = self.vault.tokenize(row[name], scope)
                    masked.append(row)
                out = masked if isinstance(out, list) else masked[0]
            elif isinstance(ob, Aggregate):
                rows = out if isinstance(out, list) else [out]
                out = aggregate_records(rows, ob.level).to_dict()
        return out

    def authorize_access(
        self,
        subject: Mapping,
        asset_ref: str,
        payload: Any = None,
        resource: Mapping | None = None,
        purpose: str | None = None,
        action: str = "read",
        now: float | None = None,
    ) -> AccessResult:
        now = self.clock if now is None else now
        resource = dict(resource or {})
        try:
            attrs = self._attributes(asset_ref)
        except GovernanceError:
            attrs = {}
        resource.setdefault("asset", asset_ref)
        env = {"timestamp": now, "channel": "api"}
        if purpose is not None:
            env["purpose"] = purpose
        request = AttributeRequest(dict(subject), resource, env, attrs, action)
        if self.policy is None:
            decision = Decision("Deny", (), ("no-policy-loaded",), ("no effective policy",))
        else:
            decision = evaluate_request(self.policy, request)
        actor = str(subject.get("id") or subject.get("role") or "anonymous")
        out = None
        if decision.outcome == "Allow":
            out = self._apply_obligations(decision, payload, scope=f"access:{resource.get('classification', 'Internal')}")
        elif decision.outcome == "Escalate":
            self.pending.append({"subject": dict(subject), "asset": asset_ref, "resource": resource, "at": now})
            self.notify("governance-office", "access escalated", {"subject": actor, "asset": asset_ref}, now)
        index = self.audit.record_audit(
            timestamp=now, actor=actor, action="access", resource=asset_ref,
            outcome=decision.outcome, reason="; ".join(decision.reasons) or "allow",
            details={"obligations": list(decision.obligations), "purpose": purpose},
        )
        return AccessResult(decision, out, index)

    # -- external sharing ----------------------------------------------------------------
    def export_external(
        self,
        product_id: str,
        party: Mapping,
        purpose: str | None,
        destination: str,
        records: Sequence[Mapping] | None = None,
        now: float | None = None,
    ) -> ExportResult:
        now = self.clock if now is None else now
        actor = str(party.get("name") or party.get("id") or "external")
        resource_label = f"{product_id}->{destination}"
        if not purpose:
            self.audit.record_audit(timestamp=now, actor=actor, action="export", resource=resource_label,
                                    outcome="Deny", reason="missing purpose")
            raise MissingPurpose(f"export of {product_id} to {actor} declares no purpose")
        contract = self.contracts.resolve_contract(product_id)
        if records is None:
            sources = set(self.catalog.get(product_id, {}).get("sources", [product_id]))
            records = [r for r in self.canonical.records if r["contract"].split("@")[0] in sources]
        records = [dict(r) for r in records]
        try:
            dest_region = region_of(destination)
        except UnknownJurisdiction:
            dest_region = destination
        for rec in records:
            attrs = self._attributes(rec["asset_ref"]) if rec.get("asset_ref") in self.assets else {}
            home = region_of(attrs.get("jurisdiction")) if attrs.get("jurisdiction") else None
            if residency_restricted(contract.classification, attrs) and home != dest_region:
                self.audit.record_audit(timestamp=now, actor=actor, action="export", resource=resource_label,
                                        outcome="Deny", reason=f"residency: {home} payload to {dest_region}")
                raise ResidencyViolation(f"{contract.classification} data homed in {home} cannot go to {dest_region}")

        first_attrs = {}
        if records and records[0].get("asset_ref") in self.assets:
            first_attrs = self._attributes(records[0]["asset_ref"])
        request = AttributeRequest(
            subject=dict(party),
            resource={"classification": contract.classification, "product": product_id},
            env={"timestamp": now, "purpose": purpose, "residency_target": dest_region, "channel": "external"},
            asset=first_attrs,
            action="export",
        )
        if self.policy is None:
            decision = Decision("Deny", (), ("no-policy-loaded",), ("no effective policy",))
        else:
            decision = evaluate_request(self.policy, request)
        payload = None
        if decision.outcome == "Allow":
            pii = [name for name, sem in contract.semantics.items() if sem.pii]
            scope = f"export:{product_id}"
            if scope not in self.vault.scopes():
                self.vault.create_scope(scope)
            for rec in records:
                for name in pii:
                    if rec.get(name) is not None:
                        rec[name] = self.vault.tokenize(rec[name], scope)
            payload = self._apply_obligations(decision, records, scope)
        index = self.audit.record_audit(
            timestamp=now, actor=actor, action="export", resource=resource_label,
            outcome=decision.outcome, reason="; ".join(decision.reasons) or "allow",
            details={"purpose": purpose, "records": len(records)},
        )
        return ExportResult(decision, payload, dest_region, index)

    # -- bookkeeping ----------------------------------------------------------------------
    def produced(self) -> int:
        return sum(self.counts.values())

    def conservation_holds(self) -> bool:
        return self.produced() == sum(self.counts[d] for d in DISPOSITIONS)
