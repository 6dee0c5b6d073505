from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotgov.audit import GENESIS, AuditLog, verify_audit_chain
from iotgov.errors import ChainBroken, IncompleteRecord


def build(n: int, path=None) -> AuditLog:
    log = AuditLog(path)
    for i in range(n):
        log.record_audit(1000.0 + i, f"dev-{i % 3}", "ingest", f"dev-{i % 3}#{i}", "Accept" if i % 4 else "Quarantine",
                         reason="" if i % 4 else "out_of_range:value", details={"i": i, "note": "é"})
    return log


def flip(line: str, bit: int) -> str:
    data = bytearray(line.encode("utf-8"))
    data[(bit // 8) % len(data)] ^= 1 << (bit % 8)
    return data.decode("utf-8", errors="replace")


def test_chain_links_to_genesis():
    log = build(5)
    recs = log.records
    assert recs[0].prev_hash == GENESIS
    assert all(b.prev_hash == a.hash for a, b in zip(recs, recs[1:]))
    assert log.verify().valid and log.head == recs[-1].hash


@pytest.mark.parametrize("missing", ["timestamp", "actor", "action", "resource", "outcome"])
def test_incomplete_record(missing):
    args = {"timestamp": 1.0, "actor": "a", "action": "access", "resource": "r", "outcome": "Allow"}
    args[missing] = None
    log = AuditLog()
    with pytest.raises(IncompleteRecord):
        log.record_audit(**args)
    assert len(log) == 0


def test_file_backed_log_reopens(tmp_path):
    path = tmp_path / "audit.jsonl"
    build(4, path)
    again = AuditLog(path)
    assert len(again) == 4
    again.record_audit(9.0, "x", "policy", "p", "Allow")
    assert verify_audit_chain(path).valid and len(path.read_text().splitlines()) == 5


def test_refuses_to_extend_corrupt_file(tmp_path):
    path = tmp_path / "audit.jsonl"
    build(3, path)
    lines = path.read_text().splitlines()
    lines[1] = "garbage"
    path.write_text("\n".join(lines) + "\n")
    log = AuditLog(path)
    with pytest.raises(ChainBroken):
        log.record_audit(1.0, "a", "access", "r", "Allow")
    assert verify_audit_chain(path).first_bad_index == 1


def test_deletion_and_reordering_detected():
    lines = build(6).lines()
    assert verify_audit_chain(lines[:2] + lines[3:]).first_bad_index == 2
    assert verify_audit_chain([lines[1], lines[0]] + lines[2:]).first_bad_index == 0
    # truncation is not detectable from the lines alone; the tip still verifies
    assert verify_audit_chain(lines[:4]).valid


def test_tampered_body_with_recomputed_hash_breaks_successor():
    from iotgov.audit import chain_digest

    lines = build(4).lines()
    doc = json.loads(lines[1])
    doc["body"]["outcome"] = "Accept" if doc["body"]["outcome"] != "Accept" else "Reject"
    doc["hash"] = chain_digest(doc["prev_hash"], json.dumps(doc["body"], sort_keys=True, separators=(",", ":"), ensure_ascii=False))
    lines[1] = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    assert verify_audit_chain(lines).first_bad_index == 2


def test_window_verification():
    lines = build(10).lines()
    lines[7] = flip(lines[7], 100)
    assert verify_audit_chain(lines, 0, 5).valid
    assert verify_audit_chain(lines, 5, 10).first_bad_index == 7
    lines[2] = flip(lines[2], 100)
    assert verify_audit_chain(lines, 5, 10).first_bad_index == 5
    with pytest.raises(ChainBroken):
        verify_audit_chain(lines, 3, 11)


def test_missing_file_is_empty_chain(tmp_path):
    assert verify_audit_chain(tmp_path / "none.jsonl").valid


LOG = build(8).lines()


@settings(max_examples=400, deadline=None)
@given(st.integers(0, len(LOG) - 1), st.integers(0, 10**6))
def test_any_bit_flip_is_located(index, bit):
    lines = list(LOG)
    lines[index] = flip(lines[index], bit)
    verdict = verify_audit_chain(lines)
    assert not verdict.valid and verdict.first_bad_index == index
