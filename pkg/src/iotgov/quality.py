"""Quality dimensions, composite scores, SLA breaches and remediation."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .contracts import DataContract
from .errors import BadWeights, EmptyWindow, MissingSla, UnknownIssueClass

DIMENSIONS = ("completeness", "accuracy", "freshness", "consistency", "validity")
DEFAULT_WEIGHTS = {"completeness": 0.3, "accuracy": 0.2, "freshness": 0.2, "consistency": 0.15, "validity": 0.15}
DEFAULT_WINDOW_S = 60.0


@dataclass(frozen=True)
class Observation:
    """One message as seen by the monitor, after admission."""

    key: str  # sensor or device the slot schedule belongs to
    event_time: float
    arrival_time: float
    value: float | None = None
    valid: bool = True
    consistent: bool = True
    true_value: float | None = None


@dataclass(frozen=True)
class QualityScore:
    stream: str
    window: tuple[float, float]
    dimensions: Mapping[str, float]
    composite: float
    sample_fraction: float
    accuracy_mode: str
    records: int
    expected: int

    def to_dict(self) -> dict:
        return {
            "stream": self.stream,
            "window": list(self.window),
            "dimensions": dict(self.dimensions),
            "composite": self.composite,
            "sample_fraction": self.sample_fraction,
            "accuracy_mode": self.accuracy_mode,
            "records": self.records,
            "expected": self.expected,
        }


def _sample(n: int, fraction: float, rng: np.random.Generator | None) -> np.ndarray:
    if fraction >= 1.0 or n == 0:
        return np.arange(n)
    if rng is None:
        rng = np.random.default_rng(0)
    size = max(1, int(round(fraction * n)))
    return np.sort(rng.choice(n, size=size, replace=False))


def expected_slots(start: float, end: float, rate_hz: float) -> int:
    return int(math.floor((end - start) * rate_hz + 1e-9))


def compute_dimension_scores(
    observations: Sequence[Observation],
    contract: DataContract,
    window: tuple[float, float],
    sample_fraction: float = 1.0,
    rng: np.random.Generator | None = None,
    expected_keys: Iterable[str] | None = None,
    value_field: str | None = None,
    accuracy_mode: str = "range",
) -> tuple[dict[str, float], dict[str, Any]]:
    """Per-dimension scores for one window plus bookkeeping.

    Completeness samples the expected (key, slot) grid; a slot is filled
    when any observation lands in it, so duplicates count once. The other
    dimensions sample the received records.
    """
    if not 0.0 < sample_fraction <= 1.0:
        raise ValueError("sample fraction must lie in (0, 1]")
    if accuracy_mode not in ("range", "truth"):
        raise ValueError(f"unknown accuracy mode {accuracy_mode!r}")
    start, end = window
    rate = contract.temporal.sample_rate_hz
    obs = [o for o in observations if start <= o.event_time < end]
    keys = sorted(set(expected_keys) if expected_keys is not None else {o.key for o in obs})
    per_key = expected_slots(start, end, rate)
    n_expected = per_key * len(keys)
    if not obs and n_expected == 0:
        raise EmptyWindow(f"no data and no expected samples in [{start}, {end})")

    filled = {(o.key, int(math.floor((o.event_time - start) * rate))) for o in obs}
    if n_expected:
        picks = _sample(n_expected, sample_fraction, rng)
        hits = sum(1 for p in picks if (keys[p // per_key], int(p % per_key)) in filled)
        completeness = hits / len(picks)
    else:
        completeness = 1.0

    chosen = [obs[i] for i in _sample(len(obs), sample_fraction, rng)]
    sla = contract.quality_sla
    bounds = None
    if value_field is not None:
        spec = contract.schema.field_at(value_field)
        bounds = spec.range if spec is not None else None

    def frac(pred) -> float:
        return sum(1 for o in chosen if pred(o)) / len(chosen) if chosen else 1.0

    if accuracy_mode == "truth":
        tol = sla.max_deviation if sla and sla.max_deviation is not None else 0.0
        accuracy = frac(lambda o: o.value is not None and o.true_value is not None and abs(o.value - o.true_value) <= tol)
    elif bounds is not None:
        lo, hi = bounds
        accuracy = frac(lambda o: o.value is not None and lo <= o.value <= hi)
    else:
        accuracy = frac(lambda o: o.value is not None)
    max_age = sla.max_age_s if sla is not None else None
    freshness = 1.0 if max_age is None else frac(lambda o: o.arrival_time - o.event_time <= max_age)
    dims = {
        "completeness": completeness,
        "accuracy": accuracy,
        "freshness": freshness,
        "consistency": frac(lambda o: o.consistent),
        "validity": frac(lambda o: o.valid),
    }
    return dims, {"records": len(obs), "expected": n_expected, "accuracy_mode": accuracy_mode}


def composite_score(dims: Mapping[str, float], weights: Mapping[str, float] | None = None) -> float:
    weights = DEFAULT_WEIGHTS if weights is None else weights
    if any(w < 0 for w in weights.values()):
        raise BadWeights("weights must be non-negative")
    if abs(sum(weights.values()) - 1.0) > 1e-9:
        raise BadWeights(f"weights sum to {sum(weights.values())}, not 1")
    if set(weights) - set(dims):
        raise BadWeights(f"weights for unknown dimensions {sorted(set(weights) - set(dims))}")
    total = sum(w * dims[name] for name, w in weights.items())
    return min(1.0, max(0.0, total))


def score_window(
    stream: str,
    observations: Sequence[Observation],
    contract: DataContract,
    window: tuple[float, float],
    weights: Mapping[str, float] | None = None,
    **kwargs,
) -> QualityScore:
    dims, info = compute_dimension_scores(observations, contract, window, **kwargs)
    return QualityScore(
        stream,
        window,
        dims,
        composite_score(dims, weights),
        kwargs.get("sample_fraction", 1.0),
        info["accuracy_mode"],
        info["records"],
        info["expected"],
    )


# -- SLA --------------------------------------------------------------------------


@dataclass
class SlaBreach:
    product: str
    dimension: str
    threshold: float
    observed: float
    detected_at: float
    routed_to: str
    raci: Mapping[str, list[str]] = field(default_factory=dict)
    resolved_at: float | None = None
    window: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        return {
            "product": self.product,
            "dimension": self.dimension,
            "threshold": self.threshold,
            "observed": self.observed,
            "detected_at": self.detected_at,
            "routed_to": self.routed_to,
            "raci": dict(self.raci),
            "resolved_at": self.resolved_at,
            "window": list(self.window) if self.window else None,
        }


def raci_roster(contract: DataContract) -> dict[str, list[str]]:
    return {role: contract.ownership.with_role(role) for role in ("Responsible", "Accountable", "Consulted", "Informed")}


def evaluate_sla(contract: DataContract, scores: Mapping[str, float] | QualityScore, detected_at: float = 0.0) -> tuple[list[SlaBreach], list[dict]]:
    """Breaches for every dimension strictly below its threshold, and the alerts they raise."""
    if contract.quality_sla is None:
        raise MissingSla(contract.contract_id)
    dims = scores.dimensions if isinstance(scores, QualityScore) else scores
    window = scores.window if isinstance(scores, QualityScore) else None
    roster = raci_roster(contract)
    responsible = roster["Responsible"]
    if not responsible:
        raise MissingSla(f"{contract.contract_id} has no Responsible steward to route alerts to")
    breaches, alerts = [], []
    for dim, threshold in contract.quality_sla.thresholds().items():
        observed = dims.get(dim)
        if observed is None or observed >= threshold:
            continue
        breach = SlaBreach(contract.contract_id, dim, threshold, observed, detected_at, responsible[0], roster, window=window)
        breaches.append(breach)
        alerts.append(
            {
                "to": responsible[0],
                "cc": roster["Accountable"] + roster["Informed"],
                "consult": roster["Consulted"],
                "product": contract.contract_id,
                "dimension": dim,
                "message": f"{dim} {observed:.4f} below {threshold}",
                "at": detected_at,
            }
        )
    return breaches, alerts


# -- remediation ------------------------------------------------------------------

ISSUE_CLASSES = ("Automated", "SemiAutomated", "Manual")
ISSUE_KINDS = {
    "missing_sample": "Automated",
    "duplicate": "Automated",
    "outlier": "Automated",
    "timestamp_skew": "Automated",
    "sustained_completeness": "SemiAutomated",
    "drift_suspected": "SemiAutomated",
    "consistency_break": "Manual",
}


@dataclass
class Issue:
    kind: str
    stream: str
    issue_class: str | None = None
    data: Any = None  # series of (time, value|None) for automated fixes
    detail: str = ""

    def resolved_class(self) -> str:
        cls = self.issue_class or ISSUE_KINDS.get(self.kind)
        if cls not in ISSUE_CLASSES:
            raise UnknownIssueClass(f"{self.kind}: {cls!r}")
        return cls


@dataclass
class RemediationOutcome:
    issue_class: str
    action: str
    status: str
    original: list = field(default_factory=list)
    derived: list = field(default_factory=list)
    lineage: list[str] = field(default_factory=list)
    work_item: dict | None = None


def _interpolate(series: list[tuple[float, float | None]]) -> tuple[list, list[str]]:
    out, notes = list(series), []
    known = [i for i, (_, v) in enumerate(series) if v is not None]
    for i, (t, v) in enumerate(series):
        if v is not None:
            continue
        left = max((j for j in known if j < i), default=None)
        right = min((j for j in known if j > i), default=None)
        if left is None or right is None:
            continue
        (t0, v0), (t1, v1) = series[left], series[right]
        # neighbours at the same instant (duplicated timestamps): take their mean
        filled = (v0 + v1) / 2 if t1 == t0 else v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        out[i] = (t, filled)
        notes.append(f"interpolated t={t} from t={t0},{t1}")
    return out, notes


def _deduplicate(series):
    seen, out, notes = set(), [], []
    for t, v in series:
        if t in seen:
            notes.append(f"dropped duplicate t={t}")
            continue
        seen.add(t)
        out.append((t, v))
    return out, notes


def _suppress_outliers(series, z: float = 3.5):
    values = np.array([v for _, v in series if v is not None], dtype=float)
    if values.size < 3:
        return list(series), []
    med = float(np.median(values))
    mad = float(np.median(np.abs(values - med))) or 1e-12
    out, notes = [], []
    for t, v in series:
        if v is not None and abs(0.6745 * (v - med) / mad) > z:
            out.append((t, None))
            notes.append(f"suppressed outlier t={t} value={v}")
        else:
            out.append((t, v))
    return out, notes


def _correct_timestamps(series, offset: float):
    return [(t - offset, v) for t, v in series], [f"shifted timestamps by {-offset}s"]


def remediate(issue: Issue, **params) -> RemediationOutcome:
    cls = issue.resolved_class()
    if cls == "Automated":
        series = list(issue.data or [])
        if issue.kind == "missing_sample":
            derived, notes = _interpolate(series)
            action = "interpolate"
        elif issue.kind == "duplicate":
            derived, notes = _deduplicate(series)
            action = "deduplicate"
        elif issue.kind == "outlier":
            derived, notes = _suppress_outliers(series, params.get("z", 3.5))
            action = "suppress_outliers"
        elif issue.kind == "timestamp_skew":
            derived, notes = _correct_timestamps(series, params.get("offset", 0.0))
            action = "correct_timestamps"
        else:
            raise UnknownIssueClass(f"no automated fix for {issue.kind!r}")
        lineage = [f"remediation:{action}:{n}" for n in notes]
        return RemediationOutcome(cls, action, "applied", series, derived, lineage)
    if cls == "SemiAutomated":
        item = {
            "stream": issue.stream,
            "kind": issue.kind,
            "status": "investigating",
            "suggested_diagnostics": [
                "compare per-device arrival counts against the sample schedule",
                "check device lifecycle and admission rejections",
                "inspect gateway connectivity for the affected window",
            ],
            "detail": issue.detail,
        }
        return RemediationOutcome(cls, "route_to_steward", "pending", work_item=item)
    item = {"stream": issue.stream, "kind": issue.kind, "status": "open", "root_cause": None, "detail": issue.detail}
    return RemediationOutcome(cls, "stewardship_workflow", "open", work_item=item)


# -- streaming monitor --------------------------------------------------------------


class QualityMonitor:
    """Tumbling-window monitor over one or more contract streams on a simulated clock."""

    def __init__(
        self,
        window_s: float = DEFAULT_WINDOW_S,
        weights: Mapping[str, float] | None = None,
        sample_fraction: float = 1.0,
        rng: np.random.Generator | None = None,
        origin: float = 0.0,
        keep_history: bool = False,
    ):
        self.window_s = window_s
        self.weights = dict(weights or DEFAULT_WEIGHTS)
        composite_score({d: 1.0 for d in DIMENSIONS}, self.weights)
        self.sample_fraction = sample_fraction
        self.rng = rng
        self.origin = origin
        self._streams: dict[str, dict] = {}
        self.scores: list[QualityScore] = []
        self.breaches: list[SlaBreach] = []
        self.alerts: list[dict] = []
        self._open: dict[tuple[str, str], SlaBreach] = {}
        self._closed_until: dict[str, float] = {}
        self.keep_history = keep_history
        self.history: dict[str, list[Observation]] = {}

    def watch(self, stream: str, contract: DataContract, expected_keys: Iterable[str], value_field: str | None = None) -> None:
        self._streams[stream] = {"contract": contract, "keys": sorted(expected_keys), "field": value_field, "obs": []}
        self._closed_until.setdefault(stream, self.origin)

    def streams(self) -> list[str]:
        return sorted(self._streams)

    def observe(self, stream: str, obs: Observation) -> None:
        if stream in self._streams:
            self._streams[stream]["obs"].append(obs)
            if self.keep_history:
                self.history.setdefault(stream, []).append(obs)

    def advance(self, now: float) -> list[QualityScore]:
        """Close every window whose end is at or before ``now``."""
        closed = []
        for stream in sorted(self._streams):
            info = self._streams[stream]
            while self._closed_until[stream] + self.window_s <= now + 1e-9:
                start = self._closed_until[stream]
                end = start + self.window_s
                closed.append(self._close(stream, info, (start, end)))
                self._closed_until[stream] = end
        return closed

    def _close(self, stream: str, info: dict, window: tuple[float, float]) -> QualityScore:
        contract = info["contract"]
        in_window = [o for o in info["obs"] if window[0] <= o.event_time < window[1]]
        info["obs"] = [o for o in info["obs"] if o.event_time >= window[1]]
        try:
            score = score_window(
                stream, in_window, contract, window, self.weights,
                sample_fraction=self.sample_fraction, rng=self.rng,
                expected_keys=info["keys"], value_field=info["field"],
            )
        except EmptyWindow:
            score = QualityScore(stream, window, {d: 1.0 for d in DIMENSIONS}, 1.0, self.sample_fraction, "range", 0, 0)
        self.scores.append(score)
        if contract.quality_sla is None:
            return score
        breaches, alerts = evaluate_sla(contract, score, detected_at=window[1])
        breached_dims = {b.dimension for b in breaches}
        for (s, dim), open_breach in list(self._open.items()):
            if s == stream and dim not in breached_dims:
                open_breach.resolved_at = window[1]
                del self._open[(s, dim)]
        for breach, alert in zip(breaches, alerts):
            if (stream, breach.dimension) in self._open:
                continue
            self._open[(stream, breach.dimension)] = breach
            self.breaches.append(breach)
            self.alerts.append(alert)
        return score

    def windows(self, stream: str | None = None) -> list[QualityScore]:
        return [s for s in self.scores if stream in (None, s.stream)]

    def adherence(self) -> float:
        evaluated = [s for s in self.scores if self._streams.get(s.stream, {}).get("contract") is not None]
        if not evaluated:
            return 1.0
        bad = 0
        for s in evaluated:
            contract = self._streams[s.stream]["contract"]
            if contract.quality_sla is None:
                continue
            if any(s.dimensions[d] < t for d, t in contract.quality_sla.thresholds().items()):
                bad += 1
        return 1.0 - bad / len(evaluated)


def governance_report(
    window: tuple[float, float] | None = None,
    audit_records: Iterable = (),
    breaches: Iterable[SlaBreach] = (),
    detections: Iterable[tuple[float, float]] = (),
    severities: Mapping[str, int] | None = None,
    messages: int = 0,
    sla_adherence: float | None = None,
    streams_total: int = 0,
    streams_governed: int = 0,
    decision_latencies: Sequence[float] = (),
) -> dict:
    """MTTD, MTTR, decision distribution, failure rates, SLA adherence and contract coverage.

    ``detections`` pairs (occurred_at, detected_at) for injected faults and
    other incidents; breaches add their own detection and resolution times.
    """

    def in_window(t: float) -> bool:
        return window is None or window[0] <= t < window[1]

    breaches = [b for b in breaches if in_window(b.detected_at)]
    pairs = [(a, d) for a, d in detections if in_window(d)]
    mttd = float(np.mean([d - a for a, d in pairs])) if pairs else None
    resolved = [b for b in breaches if b.resolved_at is not None]
    mttr = float(np.mean([b.resolved_at - b.detected_at for b in resolved])) if resolved else None

    outcomes = Counter()
    for rec in audit_records:
        outcome = rec.outcome if hasattr(rec, "outcome") else rec.get("outcome")
        ts = rec.timestamp if hasattr(rec, "timestamp") else rec.get("timestamp", 0.0)
        if outcome in ("Allow", "Deny", "Escalate") and in_window(ts):
            outcomes[outcome] += 1
    total = sum(outcomes.values())
    distribution = {k: (outcomes[k] / total if total else 0.0) for k in ("Allow", "Deny", "Escalate")}

    severities = dict(severities or {})
    failure_rates = {k: (severities.get(k, 0) / messages if messages else 0.0) for k in ("Critical", "Warning", "Informational")}
    if sla_adherence is None:
        sla_adherence = 1.0 if not breaches else None
    return {
        "window": list(window) if window else None,
        "mttd_s": mttd,
        "mttr_s": mttr,
        "incidents_detected": len(pairs),
        "breaches": len(breaches),
        "breaches_resolved": len(resolved),
        "decisions": dict(outcomes),
        "decision_distribution": distribution,
        "decision_latency_mean_s": float(np.mean(decision_latencies)) if len(decision_latencies) else None,
        "validation_failure_rates": failure_rates,
        "sla_adherence": sla_adherence,
        "contract_coverage": (streams_governed / streams_total) if streams_total else 1.0,
    }

