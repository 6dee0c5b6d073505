"""Tokenization, k-suppressed aggregation, Laplace noise with budget accounting, residency routing."""

from __future__ import annotations

import hashlib
import hmac
import json
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from .errors import AccessDenied, BudgetExhausted, EmptyInput, UnknownJurisdiction, UnknownScope

# -- tokenization ----------------------------------------------------------------


class TokenVault:
    """Per-scope reversible tokens.

    Tokens are an HMAC of the value under a per-scope key, so they reveal
    nothing about the value; reversal goes through the vault's lookup table
    and only after the supplied authorizer says Allow.
    """

    def __init__(self, master_key: bytes = b"iotgov-vault", authorizer: Callable[[Mapping, str], bool] | None = None):
        self._master = master_key
        self._scopes: dict[str, dict] = {}
        self._lock = threading.Lock()
        self.authorizer = authorizer

    def create_scope(self, scope: str, policy_ref: str | None = None) -> None:
        with self._lock:
            self._scopes.setdefault(scope, {"policy": policy_ref, "forward": {}, "reverse": {}})

    def scopes(self) -> list[str]:
        return sorted(self._scopes)

    def _scope(self, scope: str) -> dict:
        try:
            return self._scopes[scope]
        except KeyError:
            raise UnknownScope(scope) from None

    def tokenize(self, value: Any, scope: str) -> str:
        vault = self._scope(scope)
        key = json.dumps(value, sort_keys=True, default=str)
        with self._lock:
            token = vault["forward"].get(key)
            if token is not None:
                return token
            scope_key = hmac.new(self._master, scope.encode(), hashlib.sha256).digest()
            token = "tok_" + hmac.new(scope_key, key.encode(), hashlib.sha256).hexdigest()[:32]
            # a 128-bit collision is not expected, but the bijection must hold regardless
            salt = 0
            while token in vault["reverse"]:
                salt += 1
                token = "tok_" + hmac.new(scope_key, f"{key}#{salt}".encode(), hashlib.sha256).hexdigest()[:32]
            vault["forward"][key] = token
            vault["reverse"][token] = value
            return token

    def detokenize(self, token: str, scope: str, requester: Mapping) -> Any:
        vault = self._scope(scope)
        if self.authorizer is None or not self.authorizer(requester, scope):
            raise AccessDenied(f"requester may not detokenize in scope {scope!r}")
        try:
            return vault["reverse"][token]
        except KeyError:
            raise AccessDenied(f"unknown token in scope {scope!r}") from None

    def size(self, scope: str) -> int:
        return len(self._scope(scope)["reverse"])

    def is_bijective(self, scope: str) -> bool:
        vault = self._scope(scope)
        forward, reverse = vault["forward"], vault["reverse"]
        if len(forward) != len(reverse) or len(set(forward.values())) != len(forward):
            return False
        return all(json.dumps(reverse[t], sort_keys=True, default=str) == k for k, t in forward.items())


# -- aggregation -------------------------------------------------------------------

AGGREGATION_LEVELS = ("sensor", "component", "asset", "line", "site", "enterprise")
DEFAULT_K = 5
K_BY_CLASSIFICATION = {"Public": 1, "Internal": DEFAULT_K, "Confidential": DEFAULT_K, "Restricted": 10}


@dataclass(frozen=True)
class AggregateGroup:
    key: str
    count: int
    members: int
    mean: float
    min: float
    max: float

    def to_dict(self) -> dict:
        return {"group": self.key, "count": self.count, "members": self.members, "mean": self.mean, "min": self.min, "max": self.max}


@dataclass(frozen=True)
class AggregateResult:
    level: str
    k: int
    groups: tuple[AggregateGroup, ...]
    suppressed: int

    def to_dict(self) -> dict:
        return {"level": self.level, "k": self.k, "groups": [g.to_dict() for g in self.groups], "suppressed": self.suppressed}


def aggregate_records(
    records: Iterable[Mapping],
    level: str,
    k: int | None = None,
    classification: str | None = None,
    value_key: str = "value",
) -> AggregateResult:
    """count/mean/min/max per hierarchy group; groups with fewer than k members are dropped.

    Each record names its group at ``level`` directly (``record["line"]``)
    or through a ``lineage`` mapping of level -> id. Group size counts
    distinct sensors, not samples, so repeated readings cannot lift a
    small group over the threshold.
    """
    if level not in AGGREGATION_LEVELS:
        raise ValueError(f"unknown aggregation level {level!r}")
    if k is None:
        k = K_BY_CLASSIFICATION.get(classification or "Internal", DEFAULT_K)
    buckets: dict[str, list[float]] = {}
    members: dict[str, set] = {}
    for rec in records:
        group = rec.get(level)
        if group is None:
            group = (rec.get("lineage") or {}).get(level)
        if group is None:
            raise ValueError(f"record lacks a {level} reference: {rec!r}")
        buckets.setdefault(group, []).append(float(rec[value_key]))
        members.setdefault(group, set()).add(rec.get("sensor", rec.get("asset_ref", id(rec))))
    if not buckets:
        raise EmptyInput("no records to aggregate")
    groups, suppressed = [], 0
    for key in sorted(buckets):
        if len(members[key]) < k:
            suppressed += 1
            continue
        values = np.asarray(buckets[key], dtype=float)
        groups.append(AggregateGroup(key, len(values), len(members[key]), float(values.mean()), float(values.min()), float(values.max())))
    return AggregateResult(level, k, tuple(groups), suppressed)


# -- differential privacy ---------------------------------------------------------------


def _exact(value: float | str | Fraction) -> Fraction:
    # Fraction(str(0.1)) == 1/10, so budgets written as decimals add up exactly
    return value if isinstance(value, Fraction) else Fraction(str(value))


@dataclass
class PrivacyBudget:
    product_id: str
    total: Fraction
    ledger: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.total = _exact(self.total)
        if self.total < 0:
            raise ValueError("budget must be non-negative")
        self._lock = threading.Lock()

    @property
    def spent(self) -> Fraction:
        return sum((_exact(e["epsilon"]) for e in self.ledger), Fraction(0))

    @property
    def remaining(self) -> Fraction:
        return self.total - self.spent

    def charge(self, epsilon, query: str = "") -> Fraction:
        eps = _exact(epsilon)
        if eps <= 0:
            raise ValueError("epsilon must be > 0")
        with self._lock:
            if self.spent + eps > self.total:
                raise BudgetExhausted(f"{self.product_id}: spent {self.spent} + {eps} exceeds {self.total}")
            self.ledger.append({"query": query, "epsilon": str(eps)})
            return self.spent

    def to_dict(self) -> dict:
        return {"product_id": self.product_id, "total": str(self.total), "spent": str(self.spent), "ledger": list(self.ledger)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "PrivacyBudget":
        return cls(data["product_id"], Fraction(data["total"]), list(data.get("ledger", [])))


def dp_query(
    true_answer: float,
    sensitivity: float,
    epsilon,
    budget: PrivacyBudget,
    rng: np.random.Generator,
    query: str = "",
) -> float:
    """Laplace mechanism: answer + Lap(sensitivity / epsilon), charged to the budget first."""
    if sensitivity < 0:
        raise ValueError("sensitivity must be >= 0")
    eps = _exact(epsilon)
    budget.charge(eps, query)
    scale = sensitivity / float(eps)
    return float(true_answer + rng.laplace(0.0, scale)) if scale > 0 else float(true_answer)


def laplace_noise(sensitivity: float, epsilon: float, size: int, rng: np.random.Generator) -> np.ndarray:
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    return rng.laplace(0.0, sensitivity / epsilon, size=size)


# -- residency ----------------------------------------------------------------------

JURISDICTION_REGION = {
    "EU": "EU", "DE": "EU", "FR": "EU", "IT": "EU", "ES": "EU", "NL": "EU", "PL": "EU", "AT": "EU", "BE": "EU", "IE": "EU",
    "US": "US",
    "CN": "CN",
    "UK": "UK", "GB": "UK",
    "JP": "JP",
    "IN": "IN",
    "BR": "BR",
}


def region_of(jurisdiction: str | None) -> str:
    if not jurisdiction:
        raise UnknownJurisdiction("asset has no jurisdiction attribute")
    try:
        return JURISDICTION_REGION[str(jurisdiction).upper()]
    except KeyError:
        raise UnknownJurisdiction(str(jurisdiction)) from None


def residency_restricted(classification: str | None, attributes: Mapping) -> bool:
    return classification == "Restricted" or attributes.get("data_residency") == "in-region"


def route_partition(measurement: Mapping, attributes: Mapping) -> str:
    """Region partition that holds the payload: the asset's home region."""
    return region_of(attributes.get("jurisdiction"))


class PartitionStore:
    """Payloads live only in their home region; catalog metadata is replicated everywhere."""

    def __init__(self, root: str | Path | None = None, regions: Iterable[str] = ("EU", "US", "CN")):
        self.root = Path(root) if root is not None else None
        self.regions = sorted(set(regions))
        self.payloads: dict[str, list[dict]] = {r: [] for r in self.regions}
        self.catalog: dict[str, list[dict]] = {r: [] for r in self.regions}
        self._lock = threading.Lock()

    def place(self, record_id: str, payload: Mapping, home: str, restricted: bool, metadata: Mapping | None = None) -> str:
        with self._lock:
            if home not in self.payloads:
                self.regions = sorted({*self.regions, home})
                self.payloads[home] = []
                self.catalog[home] = [dict(m) for m in next(iter(self.catalog.values()), [])]
            entry = {"id": record_id, "home": home, "restricted": restricted, **(metadata or {})}
            self.payloads[home].append({"id": record_id, "home": home, "restricted": restricted, "payload": dict(payload)})
            for region in self.catalog:
                self.catalog[region].append(entry)
            if self.root is not None:
                self.root.mkdir(parents=True, exist_ok=True)
                with (self.root / f"{home}.jsonl").open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(self.payloads[home][-1], sort_keys=True) + "\n")
            return home

    def fetch(self, record_id: str, from_region: str) -> dict:
        for entry in self.catalog.get(from_region, []):
            if entry["id"] == record_id:
                if entry["home"] != from_region:
                    raise AccessDenied(f"payload {record_id} resides in {entry['home']}, not {from_region}")
                for item in self.payloads[from_region]:
                    if item["id"] == record_id:
                        return item["payload"]
        raise KeyError(record_id)

    def misplaced_restricted(self) -> int:
        """Restricted payloads sitting outside their home region; should always be 0."""
        return sum(1 for region, items in self.payloads.items() for it in items if it["restricted"] and it["home"] != region)
