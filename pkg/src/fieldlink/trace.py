"""Event-trace files: line-delimited JSON with a versioned header.

The first line is the header record; every following line is one event with
a millisecond timestamp. Determinism matters here: records are written with
a fixed key order and no wall-clock contamination, so identical (seed,
scenario) runs produce byte-identical files.

Event kinds:

    session_start  t, label, site_distance_m?, ops
    ingest         t, op, seq, peb, lat/lon/hdop/sats (when a fix exists),
                   orient, batt, ch (channel map), has_fix
    poll           t, op, kind, last_seq
    q_lost         t, op
    r_lost         t, op
    deliver        t, op, seqs (inclusive [lo, hi] runs), dups,
                   parity_dropped, corrupt (seqs), violation, gap?
    timeout        t, op, n (consecutive count)
    phase          t, op, phase
    warning        t, op, flags, icon
    gap            t, op, after, oldest
    cmd            t, op, kind, ok, detail?
    session_end    t, label
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .geo import GpsFix, haversine
from .metrics import SampleRecord, SessionLog, SessionMetrics, compute_session_metrics

TRACE_FORMAT = "fieldlink-trace"
TRACE_VERSION = 1


class TraceError(ValueError):
    """Trace file unreadable; carries the byte offset of the failure."""

    def __init__(self, message: str, byte_offset: int):
        super().__init__(f"{message} (at byte {byte_offset})")
        self.byte_offset = byte_offset


@dataclass
class EventTrace:
    header: dict
    records: list[dict] = field(default_factory=list)

    def record(self, t: int, kind: str, **fields) -> None:
        rec = {"t": t, "kind": kind}
        rec.update(fields)
        self.records.append(rec)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps(self.header) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")


def new_trace(scenario_name: str, seed: int) -> EventTrace:
    return EventTrace(
        header={
            "format": TRACE_FORMAT,
            "version": TRACE_VERSION,
            "scenario": scenario_name,
            "seed": seed,
        }
    )


def load_trace(path) -> EventTrace:
    """Parse a trace file; malformed or truncated input reports its offset."""
    offset = 0
    header = None
    records: list[dict] = []
    with open(path, "rb") as fh:
        for line_no, raw in enumerate(fh):
            stripped = raw.strip()
            if stripped:
                try:
                    rec = json.loads(stripped)
                except json.JSONDecodeError as exc:
                    raise TraceError(f"line {line_no + 1} is not valid JSON", offset + exc.pos) from exc
                if header is None:
                    if rec.get("format") != TRACE_FORMAT or "version" not in rec:
                        raise TraceError("first line is not a trace header", offset)
                    if rec["version"] != TRACE_VERSION:
                        raise TraceError(f"unsupported trace version {rec['version']}", offset)
                    header = rec
                else:
                    if "t" not in rec or "kind" not in rec:
                        raise TraceError(f"line {line_no + 1} lacks t/kind", offset)
                    records.append(rec)
            offset += len(raw)
    if header is None:
        raise TraceError("empty trace", 0)
    return EventTrace(header, records)


def compress_runs(seqs: Iterable[int]) -> list[list[int]]:
    """Sorted seqs -> inclusive [lo, hi] runs."""
    runs: list[list[int]] = []
    for s in seqs:
        if runs and s == runs[-1][1] + 1:
            runs[-1][1] = s
        else:
            runs.append([s, s])
    return runs


def expand_runs(runs: Iterable[Iterable[int]]) -> list[int]:
    out: list[int] = []
    for lo, hi in runs:
        out.extend(range(lo, hi + 1))
    return out


def split_sessions(records: list[dict]) -> list[tuple[dict, list[dict]]]:
    """(session_start record, events...) pairs in file order."""
    sessions = []
    current = None
    for rec in records:
        if rec["kind"] == "session_start":
            current = (rec, [])
            sessions.append(current)
        elif current is not None:
            current[1].append(rec)
    return sessions


def build_session_logs(
    trace: EventTrace,
    rm_position: Optional[tuple[float, float]] = None,
) -> list[SessionLog]:
    """Reconstruct one SessionLog per (session, operator) from a trace.

    Per-sample distance is the great-circle distance between the sample's
    own GPS fix (when it passes the quality gate) and the station position;
    the station position defaults to the header's origin.
    """
    if rm_position is None:
        rm_position = (trace.header.get("origin_lat", 0.0), trace.header.get("origin_lon", 0.0))
    logs = []
    for start, events in split_sessions(trace.records):
        per_op: dict[str, dict] = {}
        for op in start.get("ops", []):
            per_op[op] = {"ingests": {}, "valid": {}, "corrupt": {}}
        for rec in events:
            op = rec.get("op")
            if op is None or op not in per_op:
                continue
            slot = per_op[op]
            if rec["kind"] == "ingest":
                slot["ingests"][rec["seq"]] = rec
            elif rec["kind"] == "deliver":
                for seq in expand_runs(rec.get("seqs", [])):
                    slot["valid"].setdefault(seq, rec["t"])
                for seq in rec.get("corrupt", []):
                    slot["corrupt"].setdefault(seq, rec["t"])
        for op, slot in per_op.items():
            if not slot["ingests"]:
                continue
            records = []
            for seq, ing in sorted(slot["ingests"].items()):
                distance = None
                if ing.get("has_fix") and ing["hdop"] < 1.5 and ing["sats"] >= 7:
                    distance = haversine(ing["lat"], ing["lon"], rm_position[0], rm_position[1])
                if seq in slot["valid"]:
                    recv, parity_ok = slot["valid"][seq], True
                elif seq in slot["corrupt"]:
                    recv, parity_ok = slot["corrupt"][seq], False
                else:
                    recv, parity_ok = None, False
                records.append(
                    SampleRecord(
                        seq=seq,
                        peb_timestamp=ing["peb"],
                        receive_timestamp=recv,
                        parity_ok=parity_ok,
                        distance_m=distance,
                        orientation=ing.get("orient"),
                    )
                )
            stamps = [r.peb_timestamp for r in records]
            label = start["label"] if len(per_op) == 1 else f"{start['label']}:{op}"
            logs.append(
                SessionLog(
                    begin_time=min(stamps),
                    end_time=max(stamps) if max(stamps) > min(stamps) else min(stamps) + 1,
                    rate_hz=1000.0 / start.get("sampling_period_ms", 1000),
                    records=records,
                    label=label,
                )
            )
    return logs


def trace_metrics(trace: EventTrace) -> list[SessionMetrics]:
    return [compute_session_metrics(log) for log in build_session_logs(trace)]


@dataclass(frozen=True)
class Conservation:
    produced: int
    delivered_valid: int
    lost_permanently: int
    still_buffered: int
    corrupt_dropped: int

    @property
    def balanced(self) -> bool:
        return self.produced == (
            self.delivered_valid + self.lost_permanently + self.still_buffered + self.corrupt_dropped
        )


def check_conservation(trace: EventTrace) -> dict[str, Conservation]:
    """End-to-end sample accounting per session:operator.

    Every produced sample ends in exactly one bucket: eventually delivered
    valid, inside a gap-noticed permanent loss, dropped corrupt with no
    later valid delivery, or still sitting in the node buffer at session end.
    """
    out = {}
    for start, events in split_sessions(trace.records):
        per_op: dict[str, dict] = {}
        for rec in events:
            op = rec.get("op")
            if op is None:
                continue
            slot = per_op.setdefault(op, {"produced": set(), "valid": set(), "corrupt": set(), "lost": set()})
            if rec["kind"] == "ingest":
                slot["produced"].add(rec["seq"])
            elif rec["kind"] == "deliver":
                slot["valid"].update(expand_runs(rec.get("seqs", [])))
                slot["corrupt"].update(rec.get("corrupt", []))
            elif rec["kind"] == "gap":
                slot["lost"].update(range(rec["after"] + 1, rec["oldest"]))
        for op, slot in per_op.items():
            produced = slot["produced"]
            delivered = slot["valid"] & produced
            lost = (slot["lost"] & produced) - delivered
            corrupt_only = (slot["corrupt"] & produced) - delivered - lost
            buffered = produced - delivered - lost - corrupt_only
            out[f"{start['label']}:{op}"] = Conservation(
                produced=len(produced),
                delivered_valid=len(delivered),
                lost_permanently=len(lost),
                still_buffered=len(buffered),
                corrupt_dropped=len(corrupt_only),
            )
    return out
