"""On-disk workspace: registries, policies and stores under one directory."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .assets import AssetRegistry
from .audit import AuditLog
from .boundary import Gateway
from .contracts import DEFAULT_GRACE_S, ContractRegistry
from .mapping import CanonicalBaseline, MappingSet, load_mapping_set
from .policy.ast import Policy
from .policy.engine import EffectivePolicy, compose_layers
from .policy.parser import parse_policy
from .privacy import PartitionStore
from .quality import DEFAULT_WEIGHTS, DEFAULT_WINDOW_S


@dataclass
class CliConfig:
    workspace: Path
    seed: int = 0
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    window_s: float = DEFAULT_WINDOW_S
    grace_period_s: float = DEFAULT_GRACE_S

    def check(self) -> None:
        if self.window_s <= 0:
            raise ValueError("window must be > 0")
        if self.grace_period_s < 0:
            raise ValueError("grace period must be >= 0")
        if abs(sum(self.weights.values()) - 1.0) > 1e-9 or any(w < 0 for w in self.weights.values()):
            raise ValueError("weights must be non-negative and sum to 1")

    @classmethod
    def load(cls, workspace: str | Path, seed: int = 0) -> "CliConfig":
        root = Path(workspace)
        cfg = cls(root, seed)
        path = root / "config.json"
        if path.exists():
            data = json.loads(path.read_text(encoding="utf-8"))
            cfg.weights = dict(data.get("weights", cfg.weights))
            cfg.window_s = float(data.get("window_s", cfg.window_s))
            cfg.grace_period_s = float(data.get("grace_period_s", cfg.grace_period_s))
        cfg.check()
        return cfg


class Workspace:
    FLEET = "fleet.json"
    CONTRACTS = "contracts.json"
    MAPPINGS = "mappings.json"
    POLICIES = "policies"
    CANONICAL = "canonical.jsonl"
    QUARANTINE = "quarantine.jsonl"
    AUDIT = "audit.jsonl"
    PARTITIONS = "partitions"

    def __init__(self, config: CliConfig):
        self.config = config
        self.root = config.workspace
        self.baseline = CanonicalBaseline()
        self._assets: AssetRegistry | None = None
        self._contracts: ContractRegistry | None = None
        self._mappings: MappingSet | None = None
        self._audit: AuditLog | None = None

    def path(self, name: str) -> Path:
        return self.root / name

    # -- registries ------------------------------------------------------------------
    @property
    def assets(self) -> AssetRegistry:
        if self._assets is None:
            p = self.path(self.FLEET)
            self._assets = AssetRegistry.load(p) if p.exists() else AssetRegistry()
        return self._assets

    @property
    def contracts(self) -> ContractRegistry:
        if self._contracts is None:
            p = self.path(self.CONTRACTS)
            if p.exists():
                self._contracts = ContractRegistry.from_dict(json.loads(p.read_text(encoding="utf-8")), self.baseline)
            else:
                self._contracts = ContractRegistry(self.baseline, self.config.grace_period_s)
        return self._contracts

    @property
    def mappings(self) -> MappingSet:
        if self._mappings is None:
            p = self.path(self.MAPPINGS)
            doc = p.read_text(encoding="utf-8") if p.exists() else '{"version": "0.0.0", "mappings": []}'
            self._mappings = load_mapping_set(doc, self.baseline)
        return self._mappings

    @property
    def audit(self) -> AuditLog:
        if self._audit is None:
            self._audit = AuditLog(self.path(self.AUDIT))
        return self._audit

    def save(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        if self._assets is not None:
            self._assets.save(self.path(self.FLEET))
        if self._contracts is not None:
            self.path(self.CONTRACTS).write_text(self._contracts.dumps(), encoding="utf-8")
        if self._mappings is not None:
            self.path(self.MAPPINGS).write_text(self._mappings.dumps(), encoding="utf-8")

    def set_mappings(self, mappings: MappingSet) -> None:
        self._mappings = mappings

    # -- policies ----------------------------------------------------------------------
    def policies(self) -> list[Policy]:
        folder = self.path(self.POLICIES)
        if not folder.is_dir():
            return []
        return [parse_policy(p.read_text(encoding="utf-8")) for p in sorted(folder.glob("*.policy"))]

    def effective_policy(self, now=None, extra: list[Policy] | None = None) -> EffectivePolicy:
        pols = self.policies() + list(extra or [])
        return compose_layers(
            [p for p in pols if p.layer == "Enterprise"],
            [p for p in pols if p.layer == "Domain"],
            [p for p in pols if p.layer == "Plant"],
            now=now,
        )

    # -- gateway -------------------------------------------------------------------------
    def gateway(self, now=None) -> Gateway:
        pols = self.policies()
        policy = self.effective_policy(now) if pols else None
        return Gateway(
            self.assets,
            self.contracts,
            self.mappings,
            policy=policy,
            audit=self.audit,
            partitions=PartitionStore(self.path(self.PARTITIONS)),
            canonical_path=self.path(self.CANONICAL),
            quarantine_path=self.path(self.QUARANTINE),
        )
