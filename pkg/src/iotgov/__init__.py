"""Governance engine for industrial IoT telemetry."""

from .assets import AssetNode, AssetRegistry, DeviceIdentity, DeviceState, Level, Lifecycle
from .audit import AuditLog, verify_audit_chain
from .boundary import Gateway, ProductDefinition, TelemetryMessage
from .contracts import ContractRegistry, ContractState, DataContract, QualitySla, required_bump
from .mapping import CanonicalBaseline, MappingSet, apply_mapping, convert_unit, load_mapping_set
from .policy import (
    AttributeRequest,
    compose_layers,
    detect_conflicts,
    evaluate_request,
    evaluate_retention,
    lint_policy,
    parse_policy,
)
from .privacy import PartitionStore, PrivacyBudget, TokenVault, aggregate_records, dp_query
from .quality import QualityMonitor, compute_dimension_scores, evaluate_sla, governance_report, remediate
from .schema import CompatibilityMode, FieldSpec, FieldType, StructSchema, check_compatibility, classify_schema_change
from .sim import FaultSpec, FleetSpec, Scenario, generate_fleet, run_scenario

__version__ = "0.1.0"

__all__ = [
    "AssetNode",
    "AssetRegistry",
    "AttributeRequest",
    "AuditLog",
    "CanonicalBaseline",
    "CompatibilityMode",
    "ContractRegistry",
    "ContractState",
    "DataContract",
    "DeviceIdentity",
    "DeviceState",
    "FaultSpec",
    "FieldSpec",
    "FieldType",
    "FleetSpec",
    "Gateway",
    "Level",
    "Lifecycle",
    "MappingSet",
    "PartitionStore",
    "PrivacyBudget",
    "ProductDefinition",
    "QualityMonitor",
    "QualitySla",
    "Scenario",
    "StructSchema",
    "TelemetryMessage",
    "TokenVault",
    "aggregate_records",
    "apply_mapping",
    "check_compatibility",
    "classify_schema_change",
    "compose_layers",
    "compute_dimension_scores",
    "convert_unit",
    "detect_conflicts",
    "dp_query",
    "evaluate_request",
    "evaluate_retention",
    "evaluate_sla",
    "generate_fleet",
    "governance_report",
    "lint_policy",
    "load_mapping_set",
    "parse_policy",
    "remediate",
    "required_bump",
    "run_scenario",
    "verify_audit_chain",
]
