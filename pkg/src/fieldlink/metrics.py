"""Session evaluation: expected counts, correctness and real-time ratios.

Conventions, locked by tests:

* Expected samples count both endpoints: floor((end - begin) / period) + 1.
* The transmit-clock offset is estimated as the session-minimum delivery
  delay (receive - production timestamp); it is the only estimator that
  never classifies the best sample of the session as late.
* A received sample is real-time when its offset-corrected delay is at
  most 1000 ms. Missing and parity-failed samples count against both
  percentages, whose denominator is always the expected count.
* Percentages are reported to two decimals.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geo import GpsFix, haversine, reference_position  # re-exported surface

REALTIME_LIMIT_MS = 1000
DEFAULT_BIN_WIDTH_M = 25.0


class InvalidSessionError(ValueError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    """Fate of one produced sample; receive_timestamp None means never arrived."""

    seq: int
    peb_timestamp: int
    receive_timestamp: Optional[int]
    parity_ok: bool = True
    distance_m: Optional[float] = None
    orientation: Optional[str] = None

    @property
    def received_valid(self) -> bool:
        return self.receive_timestamp is not None and self.parity_ok


@dataclass
class SessionLog:
    begin_time: int
    end_time: int
    rate_hz: float
    records: list[SampleRecord] = field(default_factory=list)
    label: str = ""

    def __post_init__(self):
        if self.end_time <= self.begin_time:
            raise InvalidSessionError("end_time must exceed begin_time")
        if self.rate_hz <= 0:
            raise InvalidSessionError("rate must be positive")


@dataclass(frozen=True)
class DistanceBin:
    lo_m: float
    hi_m: float
    orientation: Optional[str]
    expected: int
    received_valid: int
    realtime: int

    @property
    def pct_correct(self) -> float:
        return round(100.0 * self.received_valid / self.expected, 2) if self.expected else 0.0

    @property
    def pct_realtime(self) -> float:
        return round(100.0 * self.realtime / self.expected, 2) if self.expected else 0.0


@dataclass(frozen=True)
class SessionMetrics:
    label: str
    expected: int
    received_valid: int
    realtime: int
    pct_correct: float
    pct_realtime: float
    offset_ms: Optional[int]
    bins: tuple[DistanceBin, ...] = ()


def expected_samples(log: SessionLog) -> int:
    """Inclusive-endpoint count of samples the source should have produced."""
    period_ms = 1000.0 / log.rate_hz
    return int((log.end_time - log.begin_time) // period_ms) + 1


def percent_correct(received_valid: int, expected: int) -> float:
    if expected <= 0:
        raise InvalidSessionError("expected count must be positive")
    if received_valid > expected:
        raise InvalidSessionError("received cannot exceed expected")
    return round(100.0 * received_valid / expected, 2)


def session_offset(log: SessionLog) -> Optional[int]:
    """Minimum observed delivery delay, or None with no valid reception."""
    delays = np.array(
        [r.receive_timestamp - r.peb_timestamp for r in log.records if r.received_valid], dtype=np.int64
    )
    return int(delays.min()) if delays.size else None


def realtime_flags(log: SessionLog) -> dict[int, bool]:
    """seq -> real-time flag for every valid received sample."""
    offset = session_offset(log)
    flags = {}
    for r in log.records:
        if r.received_valid:
            flags[r.seq] = (r.receive_timestamp - r.peb_timestamp) - offset <= REALTIME_LIMIT_MS
    return flags


def percent_realtime(log: SessionLog) -> float:
    """Share of expected samples that arrived within the 1 s rule."""
    flags = realtime_flags(log)
    if not flags:
        return 0.0
    return round(100.0 * sum(flags.values()) / expected_samples(log), 2)


def compute_session_metrics(log: SessionLog, bin_width_m: float = DEFAULT_BIN_WIDTH_M) -> SessionMetrics:
    expected = expected_samples(log)
    flags = realtime_flags(log)
    received = sum(1 for r in log.records if r.received_valid)
    realtime = sum(flags.values())

    bins: dict[tuple[float, Optional[str]], list[int]] = {}
    for r in log.records:
        if r.distance_m is None:
            continue
        lo = (r.distance_m // bin_width_m) * bin_width_m
        key = (lo, r.orientation)
        tally = bins.setdefault(key, [0, 0, 0])
        tally[0] += 1
        if r.received_valid:
            tally[1] += 1
            if flags.get(r.seq):
                tally[2] += 1
    out_bins = tuple(
        DistanceBin(lo, lo + bin_width_m, orient, exp, rec, rt)
        for (lo, orient), (exp, rec, rt) in sorted(bins.items(), key=lambda kv: (kv[0][0], str(kv[0][1])))
    )
    return SessionMetrics(
        label=log.label,
        expected=expected,
        received_valid=received,
        realtime=realtime,
        pct_correct=percent_correct(received, expected),
        pct_realtime=round(100.0 * realtime / expected, 2),
        offset_ms=session_offset(log),
        bins=out_bins,
    )


# -- results files -------------------------------------------------------

SESSION_CSV_FIELDS = [
    "seq", "peb_timestamp", "receive_timestamp", "parity_ok", "delay_ms",
    "realtime", "distance_m", "orientation",
]
SUMMARY_CSV_FIELDS = [
    "session", "expected", "received_valid", "realtime",
    "pct_correct", "pct_realtime", "offset_ms",
]
BINS_CSV_FIELDS = ["session", "bin_lo_m", "bin_hi_m", "orientation", "expected", "received_valid", "realtime", "pct_correct", "pct_realtime"]


def write_session_csv(log: SessionLog, path) -> None:
    flags = realtime_flags(log)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SESSION_CSV_FIELDS)
        for r in sorted(log.records, key=lambda x: x.seq):
            delay = "" if r.receive_timestamp is None else r.receive_timestamp - r.peb_timestamp
            writer.writerow([
                r.seq,
                r.peb_timestamp,
                "" if r.receive_timestamp is None else r.receive_timestamp,
                int(r.parity_ok),
                delay,
                int(flags.get(r.seq, False)),
                "" if r.distance_m is None else f"{r.distance_m:.1f}",
                r.orientation or "",
            ])


def write_summary_csv(metrics: Sequence[SessionMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_CSV_FIELDS)
        for m in metrics:
            writer.writerow([
                m.label, m.expected, m.received_valid, m.realtime,
                f"{m.pct_correct:.2f}", f"{m.pct_realtime:.2f}",
                "" if m.offset_ms is None else m.offset_ms,
            ])


def write_bins_csv(metrics: Sequence[SessionMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BINS_CSV_FIELDS)
        for m in metrics:
            for b in m.bins:
                writer.writerow([
                    m.label, f"{b.lo_m:.0f}", f"{b.hi_m:.0f}", b.orientation or "",
                    b.expected, b.received_valid, b.realtime,
                    f"{b.pct_correct:.2f}", f"{b.pct_realtime:.2f}",
                ])
