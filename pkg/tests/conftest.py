from __future__ import annotations

import pytest

from iotgov.assets import AssetNode, AssetRegistry, DeviceIdentity
from iotgov.contracts import DataContract, FieldSemantics, Ownership, QualitySla, Steward, Temporal
from iotgov.schema import CompatibilityMode, FieldSpec, FieldType, StructSchema

STEWARDS = (Steward("alice", "Responsible"), Steward("bob", "Accountable"), Steward("ops", "Informed"))


def make_contract(
    contract_id="line-temp",
    version="1.0.0",
    fields=None,
    mode=CompatibilityMode.BACKWARD,
    sla=True,
    classification="Internal",
    rate=1.0,
    semantics=None,
):
    if fields is None:
        fields = (FieldSpec("value", FieldType.FLOAT, True, (0.0, 150.0)), FieldSpec("status", FieldType.STRING))
    if semantics is None:
        names = {f.name for f in fields}
        semantics = {"value": FieldSemantics("degC", 0.1, "Measurement.Temperature")} if "value" in names else {}
    return DataContract(
        contract_id=contract_id,
        version=version,
        schema=StructSchema(tuple(fields)),
        compatibility=mode,
        semantics=semantics,
        temporal=Temporal("event", rate, 60.0, "per-device"),
        ownership=Ownership("thermal", "vendor-x", STEWARDS),
        quality_sla=QualitySla(completeness=0.95, consistency=0.9, validity=0.9, max_age_s=5.0) if sla else None,
        classification=classification,
    )


def small_plant(jurisdiction="DE") -> AssetRegistry:
    """ent / site-a (jurisdiction) / line-1 / press-1 / motor-1 / tt-1, plus site-b in US."""
    reg = AssetRegistry()
    reg.register_node(AssetNode("ent", "Enterprise", None, {"data_residency": "global", "criticality": "normal"}))
    reg.register_node(AssetNode("site-a", "Site", "ent", {"jurisdiction": jurisdiction, "geo": [50.1, 8.6]}))
    reg.register_node(AssetNode("site-b", "Site", "ent", {"jurisdiction": "US", "geo": [42.3, -83.0]}))
    reg.register_node(AssetNode("line-1", "Line", "site-a", {"criticality": "high"}))
    reg.register_node(AssetNode("line-2", "Line", "site-b", {}))
    reg.register_node(AssetNode("press-1", "Asset", "line-1", {"manufacturer": "Acme"}))
    reg.register_node(AssetNode("motor-1", "Component", "press-1", {"serial": "M-1"}))
    reg.register_node(AssetNode("tt-1", "Sensor", "motor-1", {"measurement": "temperature", "units": "degC", "sample_rate_hz": 1}))
    return reg


def add_device(reg: AssetRegistry, device_id="dev-1", asset="tt-1", secret="s3cret", active=True) -> DeviceIdentity:
    reg.register_device(DeviceIdentity.provision(device_id, asset, secret))
    if active:
        reg.activate_device(device_id)
    return reg.device(device_id)


@pytest.fixture
def plant() -> AssetRegistry:
    return small_plant()


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
