"""Append-only audit log with a SHA-256 hash chain.

Each record's digest covers the previous digest and the canonical JSON
text of its body, so editing, dropping or reordering any record breaks
every digest after it.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .errors import ChainBroken, IncompleteRecord

GENESIS = "0" * 64
REQUIRED = ("timestamp", "actor", "action", "resource", "outcome")
ACTIONS = ("ingest", "publish", "access", "export", "quarantine", "contract", "policy", "asset", "device", "privacy")


def _body_text(body: dict) -> str:
    return json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def chain_digest(prev_hash: str, body_text: str) -> str:
    return hashlib.sha256((prev_hash + body_text).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class AuditRecord:
    index: int
    timestamp: float
    actor: str
    action: str
    resource: str
    outcome: str
    reason: str
    prev_hash: str
    hash: str
    details: Any = None

    def body(self) -> dict:
        return {
            "index": self.index,
            "timestamp": self.timestamp,
            "actor": self.actor,
            "action": self.action,
            "resource": self.resource,
            "outcome": self.outcome,
            "reason": self.reason,
            "details": self.details,
        }

    def line(self) -> str:
        return json.dumps({"prev_hash": self.prev_hash, "hash": self.hash, "body": self.body()}, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class ChainVerdict:
    valid: bool
    first_bad_index: int | None = None

    def to_dict(self) -> dict:
        return {"valid": self.valid, "first_bad_index": self.first_bad_index}


class AuditLog:
    """In-memory chain mirrored as JSON lines; the lines are the source of truth for verification."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._lines: list[str] = []
        self._records: list[AuditRecord] = []
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._lines = [ln for ln in self.path.read_text(encoding="utf-8", errors="replace").split("\n") if ln.strip()]
            for ln in self._lines:
                try:
                    self._records.append(_record_from_line(ln))
                except (ValueError, KeyError, TypeError):
                    break

    def __len__(self) -> int:
        return len(self._lines)

    @property
    def records(self) -> list[AuditRecord]:
        return list(self._records)

    @property
    def head(self) -> str:
        return self._records[-1].hash if self._records else GENESIS

    def record_audit(
        self,
        timestamp: float | None = None,
        actor: str | None = None,
        action: str | None = None,
        resource: str | None = None,
        outcome: str | None = None,
        reason: str = "",
        details: Any = None,
    ) -> int:
        fields = {"timestamp": timestamp, "actor": actor, "action": action, "resource": resource, "outcome": outcome}
        missing = [k for k, v in fields.items() if v is None or v == ""]
        if missing:
            raise IncompleteRecord(f"audit record lacks {', '.join(missing)}")
        with self._lock:
            if len(self._records) != len(self._lines):
                raise ChainBroken("log contains unreadable lines; refusing to extend it")
            index = len(self._records)
            prev = self.head
            body = {
                "index": index,
                "timestamp": float(timestamp),
                "actor": str(actor),
                "action": str(action),
                "resource": str(resource),
                "outcome": str(outcome),
                "reason": str(reason),
                "details": details,
            }
            digest = chain_digest(prev, _body_text(body))
            rec = AuditRecord(index, float(timestamp), str(actor), str(action), str(resource), str(outcome), str(reason), prev, digest, details)
            line = rec.line()
            self._records.append(rec)
            self._lines.append(line)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
            return index

    def lines(self) -> list[str]:
        return list(self._lines)

    def verify(self, start: int = 0, end: int | None = None) -> ChainVerdict:
        return verify_audit_chain(self._lines, start, end)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(ln + "\n" for ln in self._lines), encoding="utf-8")


def _record_from_line(line: str) -> AuditRecord:
    data = json.loads(line)
    body = data["body"]
    return AuditRecord(
        body["index"], body["timestamp"], body["actor"], body["action"], body["resource"],
        body["outcome"], body["reason"], data["prev_hash"], data["hash"], body.get("details"),
    )


def _split_line(line: str) -> tuple[str, str, str]:
    """prev_hash, hash and the raw body text exactly as written."""
    data = json.loads(line)
    body_text = _body_text(data["body"])
    if line != json.dumps({"prev_hash": data["prev_hash"], "hash": data["hash"], "body": data["body"]}, sort_keys=True, separators=(",", ":"), ensure_ascii=False):
        raise ValueError("line is not in canonical form")
    return data["prev_hash"], data["hash"], body_text


def verify_audit_chain(lines: Iterable[str] | str | Path, start: int = 0, end: int | None = None) -> ChainVerdict:
    """Recompute the chain; the verdict names the first record that fails.

    Records before ``start`` are still hashed (a suffix cannot be checked
    without its predecessor digest) but only failures inside
    ``[start, end)`` are reported.
    """
    if isinstance(lines, (str, Path)):
        path = Path(lines)
        lines = [ln for ln in path.read_text(encoding="utf-8", errors="replace").split("\n") if ln.strip()] if path.exists() else []
    lines = list(lines)
    end = len(lines) if end is None else end
    if not 0 <= start <= end <= len(lines):
        raise ChainBroken(f"range [{start}, {end}) outside log of {len(lines)} records")
    prev = GENESIS
    for i, line in enumerate(lines[:end]):
        try:
            prev_hash, digest, body_text = _split_line(line)
            ok = prev_hash == prev and digest == chain_digest(prev, body_text) and json.loads(body_text)["index"] == i
        except (ValueError, KeyError, TypeError):
            ok, digest = False, None
        if not ok:
            if i >= start:
                return ChainVerdict(False, i)
            return ChainVerdict(False, start)
        prev = digest
    return ChainVerdict(True, None)
