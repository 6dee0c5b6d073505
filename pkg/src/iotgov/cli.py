"""Command-line entry point.

Exit codes: 0 success, 1 governance rejection, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .assets import AssetNode, DeviceIdentity
from .audit import verify_audit_chain
from .boundary import SEVERITY, ProductDefinition, TelemetryMessage
from .contracts import DataContract, required_bump
from .errors import (
    BadSpec,
    BadWeights,
    GovernanceError,
    MalformedContract,
    PolicySyntaxError,
    ScenarioInvalid,
)
from .mapping import load_mapping_set
from .policy.engine import (
    AttributeRequest,
    compose_layers,
    detect_conflicts,
    evaluate_request,
    evaluate_retention,
    lint_policy,
)
from .policy.parser import parse_policy
from .quality import Observation, evaluate_sla, governance_report, score_window
from .schema import CompatibilityMode, check_compatibility, classify_schema_change
from .sim import Scenario, Simulation
from .workspace import CliConfig, Workspace

EXIT_OK, EXIT_REJECTED, EXIT_USAGE = 0, 1, 2
_CONFIG_ERRORS = (PolicySyntaxError, MalformedContract, BadSpec, ScenarioInvalid, BadWeights)


class Rejected(Exception):
    """A command ran correctly but the governance outcome is negative."""


class Output:
    def __init__(self, fmt: str):
        self.fmt = fmt
        self.lines: list[str] = []

    def emit(self, record: Any, text: str | None = None) -> None:
        if self.fmt == "records":
            self.lines.append(json.dumps(record, sort_keys=True, default=str))
        else:
            self.lines.append(text if text is not None else json.dumps(record, sort_keys=True, indent=2, default=str))

    def render(self) -> str:
        return "\n".join(self.lines)


def _read_json(path: str) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _attr(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


# -- asset / device ---------------------------------------------------------------


def cmd_asset(args, ws: Workspace, out: Output) -> None:
    reg = ws.assets
    if args.action == "register":
        node = AssetNode(args.id, args.level, args.parent, dict(args.attr or []), args.lifecycle)
        reg.register_node(node)
        out.emit(node.to_dict(), f"registered {node.level.value} {node.id}")
    elif args.action == "relocate":
        node = reg.relocate_node(args.id, args.parent)
        out.emit(node.to_dict(), f"relocated {node.id} under {node.parent}")
    elif args.action == "lifecycle":
        node = reg.transition_asset_lifecycle(args.id, args.to)
        out.emit(node.to_dict(), f"{node.id} is now {node.lifecycle.value}")
    else:
        attrs = reg.resolve_effective_attributes(args.id)
        out.emit({"id": args.id, "attributes": attrs})
        return
    ws.save()


def cmd_device(args, ws: Workspace, out: Output) -> None:
    reg = ws.assets
    if args.action == "register":
        reg.register_device(DeviceIdentity.provision(args.id, args.asset, args.secret))
        if args.activate:
            reg.activate_device(args.id)
    else:
        reg.revoke_device(args.id)
    d = reg.device(args.id)
    out.emit(d.to_dict(), f"device {d.device_id} is {d.state.value}")
    ws.save()


# -- contracts ---------------------------------------------------------------------


def _load_contract(path: str) -> DataContract:
    return DataContract.loads(Path(path).read_text(encoding="utf-8"))


def cmd_contract(args, ws: Workspace, out: Output) -> None:
    reg = ws.contracts
    if args.action == "register":
        c = _load_contract(args.file)
        r = reg.register_contract(c, now=args.now)
        out.emit({"contract": c.contract_id, "version": c.version, "state": reg.state(c.contract_id, c.version).value},
                 f"registered {c.contract_id}@{c.version}" + (f" ({r})" if args.verbose else ""))
        ws.save()
    elif args.action == "diff":
        old, new = _load_contract(args.old), _load_contract(args.new)
        needed = classify_schema_change(old.schema, new.schema)
        taken = required_bump(old.version, new.version)
        ok = taken is not None and (taken >= needed)
        rec = {"required": needed.name.lower(), "taken": taken.name.lower() if taken is not None else None, "sufficient": ok}
        out.emit(rec, f"schema change needs a {rec['required']} bump; version step is {rec['taken'] or 'none'}")
    elif args.action == "check":
        old, new = _load_contract(args.old), _load_contract(args.new)
        report = check_compatibility(old.schema, new.schema, CompatibilityMode.parse(args.mode))
        out.emit({"compatible": report.compatible, "mode": report.mode.value, "violations": report.violations},
                 "\n".join([f"{report.mode.value}: {'compatible' if report.compatible else 'INCOMPATIBLE'}"]
                           + [f"  {v}" for v in report.violations]))
        if not report.compatible:
            raise Rejected("incompatible contract change")
    elif args.action == "state":
        if args.approve:
            reg.approve(args.id, args.version)
        state = reg.transition_contract_state(args.id, args.to, version=args.version, now=args.now)
        out.emit({"contract": args.id, "version": args.version, "state": state.value}, f"{args.id} -> {state.value}")
        ws.save()
    else:
        rows = reg.impact_analysis(args.id)
        out.emit({"contract": args.id, "consumers": rows},
                 "\n".join([f"{len(rows)} consumers of {args.id}"]
                           + [f"  {r['consumer']} @ {r['version']} ({r['state']}{', deprecated' if r['deprecated'] else ''})" for r in rows]))


# -- policies ----------------------------------------------------------------------


def _policy_files(paths: Sequence[str] | None, ws: Workspace):
    if paths:
        return [parse_policy(Path(p).read_text(encoding="utf-8")) for p in paths]
    return ws.policies()


def _request(data: dict, ws: Workspace) -> AttributeRequest:
    req = AttributeRequest.from_dict(data)
    ref = data.get("asset_ref")
    if ref and not req.asset and ref in ws.assets:
        req = AttributeRequest(req.subject, req.resource, req.env, ws.assets.resolve_effective_attributes(ref), req.action)
    return req


def _compose(policies, now):
    return compose_layers(
        [p for p in policies if p.layer == "Enterprise"],
        [p for p in policies if p.layer == "Domain"],
        [p for p in policies if p.layer == "Plant"],
        now=now,
    )


def cmd_policy(args, ws: Workspace, out: Output) -> None:
    if args.action == "lint":
        policy = parse_policy(Path(args.file).read_text(encoding="utf-8"))
        base = _policy_files(args.baseline, ws)
        base = [p for p in base if p.layer == "Enterprise"] or None
        found = lint_policy(policy, base if policy.layer != "Enterprise" else [])
        for v in found:
            out.emit({"rule": v.rule_id, "kind": v.kind, "detail": v.detail, "witness": dict(v.witness)},
                     f"{v.rule_id}: {v.kind}: {v.detail}")
        if not found:
            out.emit({"policy": policy.policy_id, "violations": 0}, f"{policy.policy_id}: no violations")
        else:
            raise Rejected(f"{len(found)} lint violations")
    elif args.action == "eval":
        data = _read_json(args.request)
        req = _request(data, ws)
        policies = _policy_files(args.policy, ws)
        now = req.env.get("timestamp")
        eff = _compose(policies, now)
        decision = evaluate_request(eff, req)
        rec = {"request": req.to_dict(), **decision.to_dict()}
        text = [f"decision: {decision.outcome}"]
        if decision.obligations:
            text.append("obligations: " + ", ".join(decision.obligations))
        if decision.reasons:
            text.append("reasons: " + "; ".join(decision.reasons))
        if args.retention_at is not None:
            ret = evaluate_retention(eff, req, args.retention_at)
            rec["retention"] = ret.__dict__ | {"rules": list(ret.rules)}
            text.append(f"retention: {ret.disposition}")
        out.emit(rec, "\n".join(text))
        if decision.outcome == "Deny":
            raise Rejected("policy deny")
    elif args.action == "conflicts":
        policies = _policy_files(args.policy, ws)
        found = detect_conflicts(policies)
        for c in found:
            out.emit(c.to_dict(), f"{c.layer}: permit {','.join(c.permits)} vs forbid {','.join(c.forbids)} at {dict(c.assignment)}")
        if not found:
            out.emit({"conflicts": 0}, "no conflicts")
        else:
            raise Rejected(f"{len(found)} conflicts")
    else:  # test
        fixture = _read_json(args.file)
        base = Path(args.file).parent
        policies = [parse_policy((base / p).read_text(encoding="utf-8")) if p.endswith(".policy") else parse_policy(p)
                    for p in fixture.get("policies", [])] or ws.policies()
        failures = 0
        for i, case in enumerate(fixture.get("cases", [])):
            req = _request(case["request"], ws)
            decision = evaluate_request(_compose(policies, req.env.get("timestamp")), req)
            ok = decision.outcome == case["expect"]
            failures += not ok
            out.emit({"case": case.get("name", i), "expect": case["expect"], "got": decision.outcome, "ok": ok},
                     f"{'ok  ' if ok else 'FAIL'} {case.get('name', i)}: expected {case['expect']}, got {decision.outcome}")
        if failures:
            raise Rejected(f"{failures} policy test cases failed")


def cmd_mapping(args, ws: Workspace, out: Output) -> None:
    mset = load_mapping_set(Path(args.file).read_text(encoding="utf-8"), ws.baseline)
    ws.set_mappings(mset)
    ws.save()
    out.emit({"version": mset.version, "mappings": len(mset.mappings)}, f"loaded {len(mset.mappings)} mappings (version {mset.version})")


# -- data plane ------------------------------------------------------------------------


def cmd_ingest(args, ws: Workspace, out: Output) -> None:
    gw = ws.gateway()
    text = Path(args.file).read_text(encoding="utf-8")
    rows = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
    bad = 0
    for row in rows:
        now = float(row.pop("arrival", args.now if args.now is not None else 0.0))
        result = gw.ingest_message(TelemetryMessage.from_dict(row), now)
        bad += result.disposition in ("Quarantine", "Reject")
        out.emit({"message": result.report.message, "disposition": result.disposition,
                  "violations": [v.to_dict() for v in result.report.violations], "quarantine_id": result.quarantine_id},
                 f"{result.report.message}: {result.disposition}" + (f" ({result.summary})" if result.summary else ""))
    out.emit({"counts": gw.counts}, "totals: " + ", ".join(f"{k} {v}" for k, v in gw.counts.items()))


def cmd_product(args, ws: Workspace, out: Output) -> None:
    spec = _read_json(args.file)
    gw = ws.gateway()
    for ln in ws.path(ws.CANONICAL).read_text(encoding="utf-8").splitlines() if ws.path(ws.CANONICAL).exists() else []:
        rec = json.loads(ln)
        if rec.get("device_id"):
            gw.stream_devices.setdefault(rec["contract"].split("@")[0], set()).add(rec["device_id"])
    definition = ProductDefinition(
        spec["product_id"], DataContract.from_dict(spec["contract"]), spec["sources"], spec.get("steward", ""),
        window=tuple(spec["window"]) if spec.get("window") else None,
    )
    result = gw.publish_product(definition, now=args.now)
    ws.save()
    out.emit(result.__dict__, f"published {result.product_id}@{result.version}: {result.status}")


def cmd_access(args, ws: Workspace, out: Output) -> None:
    data = _read_json(args.request)
    gw = ws.gateway(now=data.get("now"))
    res = gw.authorize_access(data.get("subject", {}), data["asset_ref"], data.get("payload"), data.get("resource"),
                              data.get("purpose"), data.get("action", "read"), data.get("now"))
    out.emit({**res.decision.to_dict(), "payload": res.payload, "audit_index": res.audit_index},
             f"decision: {res.decision.outcome}")
    if res.decision.outcome == "Deny":
        raise Rejected("access denied")


def cmd_export(args, ws: Workspace, out: Output) -> None:
    gw = ws.gateway(now=args.now)
    res = gw.export_external(args.product, json.loads(args.party), args.purpose, args.destination, now=args.now)
    out.emit({**res.decision.to_dict(), "destination": res.destination, "records": res.payload, "audit_index": res.audit_index},
             f"export to {res.destination}: {res.decision.outcome}")
    if res.decision.outcome == "Deny":
        raise Rejected("export denied")


def cmd_quarantine(args, ws: Workspace, out: Output) -> None:
    gw = ws.gateway()
    if args.action == "list":
        items = gw.manage_quarantine("list")
        for q in items:
            kinds = ",".join(sorted({v.kind for v in q.report.violations}))
            out.emit(q.to_dict(), f"{q.id} {q.message.ref} {kinds}")
        if not items:
            out.emit({"open": 0}, "quarantine is empty")
        return
    res = gw.manage_quarantine(args.action, args.id, args.note, now=args.now)
    if args.action == "requeue":
        out.emit({"id": args.id, "disposition": res.disposition}, f"{args.id} requeued: {res.disposition}")
    else:
        out.emit(res.to_dict(), f"{args.id} resolved")


# -- reports ---------------------------------------------------------------------------


def _load_scenario(path: str, seed: int | None) -> Scenario:
    data = _read_json(path)
    if seed is not None:
        data["seed"] = seed
    return Scenario.from_dict(data)


def _save_simulation(sim: Simulation, ws: Workspace) -> None:
    ws.root.mkdir(parents=True, exist_ok=True)
    ws._assets, ws._contracts = sim.fleet.assets, sim.fleet.contracts
    ws.set_mappings(sim.fleet.mappings)
    ws.save()
    gw = sim.gateway
    ws.path(ws.AUDIT).write_text("".join(ln + "\n" for ln in gw.audit.lines()), encoding="utf-8")
    gw.canonical.path = ws.path(ws.CANONICAL)
    gw.canonical.rewrite()
    ws.path(ws.QUARANTINE).write_text(
        "".join(json.dumps(q.to_dict(), sort_keys=True) + "\n" for q in gw.quarantine.values()), encoding="utf-8"
    )


def cmd_simulate(args, ws: Workspace, out: Output) -> None:
    scenario = _load_scenario(args.scenario, args.seed)
    sim = Simulation(scenario)
    result = sim.run()
    if args.save:
        _save_simulation(sim, ws)
    out.emit(result.to_dict(), result.summary())
    if not (result.conserved and result.audit_valid):
        raise Rejected("scenario invariants violated")


def _workspace_observations(ws: Workspace) -> dict[str, list[Observation]]:
    streams: dict[str, list[Observation]] = {}
    canon = ws.path(ws.CANONICAL)
    if canon.exists():
        for ln in canon.read_text(encoding="utf-8").splitlines():
            if not ln.strip():
                continue
            r = json.loads(ln)
            streams.setdefault(r["contract"].split("@")[0], []).append(
                Observation(r.get("device_id") or r.get("asset_ref"), r["event_time"], r["ingestion_time"],
                            r.get("value"), True, r.get("disposition") == "Accept")
            )
    return streams


def cmd_quality(args, ws: Workspace, out: Output) -> None:
    rng = np.random.default_rng(args.seed or 0)
    scores = []
    if args.scenario:
        sim = Simulation(_load_scenario(args.scenario, args.seed))
        sim.run()
        scores = [s for s in sim.monitor.windows() if args.contract in (None, s.stream)]
    else:
        window = ws.config.window_s
        for stream, obs in sorted(_workspace_observations(ws).items()):
            if args.contract not in (None, stream):
                continue
            contract = ws.contracts.resolve_contract(stream)
            keys = sorted({o.key for o in obs})
            start = min(o.event_time for o in obs)
            start -= start % window
            end = max(o.event_time for o in obs)
            while start <= end:
                scores.append(score_window(stream, obs, contract, (start, start + window), ws.config.weights,
                                           sample_fraction=args.sample_fraction, rng=rng, expected_keys=keys))
                start += window
    for s in scores:
        contract = ws.contracts.resolve_contract(s.stream) if s.stream in ws.contracts else None
        breaches = []
        if contract is not None and contract.quality_sla is not None:
            breaches = [b.dimension for b in evaluate_sla(contract, s)[0]]
        dims = " ".join(f"{k}={v:.3f}" for k, v in s.dimensions.items())
        out.emit({**s.to_dict(), "breaches": breaches},
                 f"{s.stream} [{s.window[0]:.0f}, {s.window[1]:.0f}) composite={s.composite:.3f} {dims}"
                 + (f" BREACH {','.join(breaches)}" if breaches else ""))
    if not scores:
        out.emit({"windows": 0}, "no data")


def cmd_governance(args, ws: Workspace, out: Output) -> None:
    if args.scenario:
        sim = Simulation(_load_scenario(args.scenario, args.seed))
        result = sim.run()
        gw = sim.gateway
        report = governance_report(
            audit_records=gw.audit.records,
            breaches=sim.monitor.breaches,
            detections=[(f.at, f.detected_at) for f in result.faults if f.detected_at is not None],
            severities=gw.severity_counts,
            messages=gw.produced(),
            sla_adherence=sim.monitor.adherence(),
            streams_total=len(sim.fleet.streams()),
            streams_governed=sum(1 for s in sim.fleet.streams() if s in sim.fleet.contracts),
        )
    else:
        records = list(ws.audit.records)
        severities = {"Critical": 0, "Warning": 0, "Informational": 0}
        for r in records:
            if r.action == "ingest" and r.reason != "ok":
                for kind in r.reason.split(","):
                    severities[SEVERITY.get(kind, "Critical")] += 1
        streams = set(_workspace_observations(ws))
        report = governance_report(
            audit_records=records,
            severities=severities,
            messages=sum(1 for r in records if r.action == "ingest"),
            streams_total=len({m.contract_id for m in ws.mappings.mappings.values() if m.contract_id} | streams),
            streams_governed=sum(1 for s in streams if s in ws.contracts),
        )
    lines = [f"{k}: {v}" for k, v in report.items()]
    out.emit(report, "\n".join(lines))


def cmd_audit(args, ws: Workspace, out: Output) -> None:
    path = Path(args.file) if args.file else ws.path(ws.AUDIT)
    if not path.exists():
        raise FileNotFoundError(str(path))
    verdict = verify_audit_chain(path, args.start, args.end)
    out.emit({"valid": verdict.valid, "first_bad_index": verdict.first_bad_index},
             "audit chain verifies" if verdict.valid else f"audit chain broken at record {verdict.first_bad_index}")
    if not verdict.valid:
        raise Rejected("audit chain broken")


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iotgov", description="Governance for industrial IoT telemetry.")
    p.add_argument("--workspace", default=".", help="directory holding registries and stores")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--format", choices=("text", "records"), default="text")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("asset").add_subparsers(dest="action", required=True)
    r = a.add_parser("register")
    r.add_argument("--id", required=True)
    r.add_argument("--level", required=True)
    r.add_argument("--parent")
    r.add_argument("--attr", type=_attr, action="append", help="key=value (value parsed as JSON when possible)")
    r.add_argument("--lifecycle", default="Commissioning")
    r = a.add_parser("relocate")
    r.add_argument("--id", required=True)
    r.add_argument("--parent", required=True)
    r = a.add_parser("lifecycle")
    r.add_argument("--id", required=True)
    r.add_argument("--to", required=True)
    r = a.add_parser("show")
    r.add_argument("--id", required=True)

    d = sub.add_parser("device").add_subparsers(dest="action", required=True)
    r = d.add_parser("register")
    r.add_argument("--id", required=True)
    r.add_argument("--asset", required=True)
    r.add_argument("--secret", required=True)
    r.add_argument("--activate", action="store_true")
    r = d.add_parser("revoke")
    r.add_argument("--id", required=True)

    c = sub.add_parser("contract").add_subparsers(dest="action", required=True)
    r = c.add_parser("register")
    r.add_argument("file")
    r.add_argument("--now", type=float, default=0.0)
    r.add_argument("--verbose", action="store_true")
    for name in ("diff", "check"):
        r = c.add_parser(name)
        r.add_argument("--old", required=True)
        r.add_argument("--new", required=True)
        if name == "check":
            r.add_argument("--mode", default="backward", choices=("backward", "forward", "full", "none"))
    r = c.add_parser("state")
    r.add_argument("--id", required=True)
    r.add_argument("--to", required=True)
    r.add_argument("--version")
    r.add_argument("--approve", action="store_true")
    r.add_argument("--now", type=float, default=0.0)
    r = c.add_parser("impact")
    r.add_argument("--id", required=True)

    pol = sub.add_parser("policy").add_subparsers(dest="action", required=True)
    r = pol.add_parser("lint")
    r.add_argument("file")
    r.add_argument("--baseline", nargs="*")
    r = pol.add_parser("eval")
    r.add_argument("--request", required=True)
    r.add_argument("--policy", nargs="*")
    r.add_argument("--retention-at", type=float, default=None)
    r = pol.add_parser("conflicts")
    r.add_argument("--policy", nargs="*")
    r = pol.add_parser("test")
    r.add_argument("file")

    m = sub.add_parser("mapping").add_subparsers(dest="action", required=True)
    m.add_parser("load").add_argument("file")

    r = sub.add_parser("ingest")
    r.add_argument("file", help="JSON lines of telemetry messages")
    r.add_argument("--now", type=float)

    pr = sub.add_parser("product").add_subparsers(dest="action", required=True)
    r = pr.add_parser("publish")
    r.add_argument("file")
    r.add_argument("--now", type=float)

    r = sub.add_parser("access")
    r.add_argument("--request", required=True)

    r = sub.add_parser("export")
    r.add_argument("--product", required=True)
    r.add_argument("--party", required=True, help="JSON object describing the receiving party")
    r.add_argument("--purpose")
    r.add_argument("--destination", required=True)
    r.add_argument("--now", type=float)

    q = sub.add_parser("quarantine").add_subparsers(dest="action", required=True)
    q.add_parser("list")
    for name in ("requeue", "resolve"):
        r = q.add_parser(name)
        r.add_argument("id")
        r.add_argument("--note")
        r.add_argument("--now", type=float)

    s = sub.add_parser("simulate").add_subparsers(dest="action", required=True)
    r = s.add_parser("run")
    r.add_argument("scenario")
    r.add_argument("--save", action="store_true", help="write the resulting stores into the workspace")

    qr = sub.add_parser("quality").add_subparsers(dest="action", required=True)
    r = qr.add_parser("report")
    r.add_argument("--contract")
    r.add_argument("--scenario")
    r.add_argument("--sample-fraction", type=float, default=1.0)

    g = sub.add_parser("governance").add_subparsers(dest="action", required=True)
    g.add_parser("report").add_argument("--scenario")

    au = sub.add_parser("audit").add_subparsers(dest="action", required=True)
    r = au.add_parser("verify")
    r.add_argument("--file")
    r.add_argument("--start", type=int, default=0)
    r.add_argument("--end", type=int, default=None)
    return p


HANDLERS = {
    "asset": cmd_asset,
    "device": cmd_device,
    "contract": cmd_contract,
    "policy": cmd_policy,
    "mapping": cmd_mapping,
    "ingest": cmd_ingest,
    "product": cmd_product,
    "access": cmd_access,
    "export": cmd_export,
    "quarantine": cmd_quarantine,
    "simulate": cmd_simulate,
    "quality": cmd_quality,
    "governance": cmd_governance,
    "audit": cmd_audit,
}


def run_command(argv: Sequence[str]) -> tuple[int, str, str]:
    """Run one command; returns (exit code, stdout text, stderr text)."""
    parser = build_parser()
    err: list[str] = []
    _patch_errors(parser, err)
    shown = io.StringIO()
    try:
        with contextlib.redirect_stdout(shown):
            args = parser.parse_args(list(argv))
    except _UsageExit:
        return EXIT_USAGE, "", "\n".join(err)
    except SystemExit as exc:  # --help
        return int(exc.code or 0), shown.getvalue().rstrip("\n"), ""

    out = Output(args.format)
    try:
        config = CliConfig.load(args.workspace, args.seed or 0)
        ws = Workspace(config)
        HANDLERS[args.command](args, ws, out)
        code = EXIT_OK
    except Rejected as exc:
        err.append(f"rejected: {exc}")
        code = EXIT_REJECTED
    except _CONFIG_ERRORS as exc:
        err.append(f"error: {type(exc).__name__}: {exc}")
        code = EXIT_USAGE
    except GovernanceError as exc:
        err.append(f"rejected: {type(exc).__name__}: {exc}")
        code = EXIT_REJECTED
    except (OSError, ValueError, KeyError, TypeError) as exc:
        err.append(f"error: {type(exc).__name__}: {exc}")
        code = EXIT_USAGE
    return code, out.render(), "\n".join(err)


class _UsageExit(Exception):
    pass


def _patch_errors(parser: argparse.ArgumentParser, err: list[str]) -> None:
    def _error(message: str, _p=parser):
        err.append(_p.format_usage() + f"{_p.prog}: error: {message}")
        raise _UsageExit()

    parser.error = _error  # type: ignore[method-assign]
    if parser._subparsers is not None:
        for action in parser._subparsers._group_actions:
            for subp in action.choices.values():
                _patch_errors(subp, err)


def main(argv: Sequence[str] | None = None) -> int:
    code, stdout, stderr = run_command(sys.argv[1:] if argv is None else argv)
    if stdout:
        print(stdout)
    if stderr:
        print(stderr, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
