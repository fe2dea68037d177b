"""Remote-monitoring station: polling, reconnection, warnings, icon colors.

One monitor per operator drives the pull protocol: it sends the sequence
number of the last sample it holds, parity-checks what comes back, advances
its cursor only through the contiguous valid prefix (so corrupted or missing
samples are re-requested on the next poll) and treats a gap notice from the
node as a permanent, recorded loss. Three consecutive 2 s timeouts mark the
operator disconnected; from there a ping probe goes out every 2 s, and the
first answer resumes polling from the preserved cursor so the backlog drains
in batches of 50.

Threshold evaluation turns each accepted frame into per-channel warning
codes and three global flags (user health, environment, equipment), which in
turn drive the map icon color: grey while disconnected or without GPS, red
while any flag warns, green otherwise. Shipped threshold defaults are
engineering placeholders, not clinical limits.
"""

from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence

from .opnode import GapNotice, QueryKind, QueryMessage, ReplyMessage, StoredSample
from .sensors import (
    CHANNELS,
    PEB_SENSOR_ID,
    SensorDescriptor,
    SensorFrame,
    check_parity,
    decode_values,
    default_sensor_table,
    frame_gps_fix,
)

DEFAULT_POLL_PERIOD_MS = 1000
DEFAULT_TIMEOUT_MS = 2000
DEFAULT_TIMEOUT_THRESHOLD = 3
RECONNECT_INTERVAL_MS = 2000  # fixed, no exponential growth: recovery must be prompt
DEFAULT_MAX_OPERATORS = 3
REALTIME_LIMIT_MS = 1000
DEFAULT_BATTERY_FLOOR = 0.15


class Phase(str, Enum):
    CONNECTED = "connected"
    PROBING = "probing"
    DISCONNECTED = "disconnected"


class WarningCode(str, Enum):
    OK = "ok"
    LOW = "low"
    HIGH = "high"
    STALE = "stale"


class Flag(str, Enum):
    OK = "ok"
    WARN = "warn"


class IconColor(str, Enum):
    GREY = "grey"
    GREEN = "green"
    RED = "red"


HEALTH_CHANNELS = frozenset(
    {"heart_rate", "breathing_rate", "breathing_rate_piezo", "body_temp",
     "heat_flux", "activity_level", "fall_detected", "motion_level"}
)
ENVIRONMENT_CHANNELS = frozenset({"external_temp", "co_ppm", "co2_ppm"})


@dataclass(frozen=True)
class ThresholdEntry:
    low: float = -math.inf
    high: float = math.inf
    dwell_s: int = 0  # 0 evaluates instantaneously; >0 uses the dose window

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("need low < high")


@dataclass
class ThresholdTable:
    entries: dict[str, ThresholdEntry] = field(default_factory=dict)
    battery_floor: float = DEFAULT_BATTERY_FLOOR


def default_thresholds() -> ThresholdTable:
    """Placeholder bounds, explicitly non-clinical."""
    return ThresholdTable(
        entries={
            "heart_rate": ThresholdEntry(40.0, 180.0),
            "breathing_rate": ThresholdEntry(6.0, 40.0),
            "breathing_rate_piezo": ThresholdEntry(6.0, 40.0),
            "body_temp": ThresholdEntry(35.0, 39.0),
            "co_ppm": ThresholdEntry(high=50.0, dwell_s=900),  # 15 min dose window
            "co2_ppm": ThresholdEntry(high=5000.0),
            "external_temp": ThresholdEntry(high=60.0),
        },
    )


class DoseTracker:
    """Sliding-window exposure integral for dwell-gated channels.

    Warns when the integral of the value over the last dwell seconds reaches
    bound x dwell, i.e. when the windowed cumulative dose exceeds what a
    bound-level exposure over the full window would deliver. Appends must be
    time-monotone; late out-of-order refills are ignored.
    """

    def __init__(self, dwell_ms: int):
        self.dwell_ms = dwell_ms
        self._points: deque[tuple[int, float]] = deque()

    def update(self, ts: int, value: float) -> float:
        if self._points and ts <= self._points[-1][0]:
            return self.integral()
        self._points.append((ts, value))
        floor = ts - self.dwell_ms
        while len(self._points) > 1 and self._points[1][0] <= floor:
            self._points.popleft()
        return self.integral()

    def integral(self) -> float:
        """Left-rectangle integral in value x ms over the retained window."""
        pts = self._points
        return sum(pts[i][1] * (pts[i + 1][0] - pts[i][0]) for i in range(len(pts) - 1))


def icon_color(phase: Phase, gps_available: bool, health: Flag, environment: Flag, equipment: Flag) -> IconColor:
    """Total color mapping; the console consumes this verbatim."""
    if phase == Phase.DISCONNECTED or not gps_available:
        return IconColor.GREY
    if Flag.WARN in (health, environment, equipment):
        return IconColor.RED
    return IconColor.GREEN


@dataclass(frozen=True)
class WarningState:
    codes: dict[str, WarningCode]
    health: Flag
    environment: Flag
    equipment: Flag
    icon: IconColor

    def flags(self) -> dict[str, str]:
        return {"health": self.health.value, "environment": self.environment.value, "equipment": self.equipment.value}


def _ok_state() -> WarningState:
    return WarningState({}, Flag.OK, Flag.OK, Flag.OK, IconColor.GREY)


@dataclass(frozen=True)
class ConnectionState:
    op_id: str
    phase: Phase = Phase.CONNECTED
    last_seq_received: int = 0
    consecutive_timeouts: int = 0
    last_reply_time: Optional[int] = None
    measured_offset_ms: Optional[int] = None


@dataclass(frozen=True)
class HistoryEntry:
    seq: int
    frame: SensorFrame
    peb_timestamp: int
    receive_time: int
    realtime: bool


class RealtimeTagger:
    """Provisional real-time flags with a running minimum-delay offset.

    Final session metrics recompute the flags with the full-session minimum;
    the running version is what a live console can know at receive time.
    """

    def __init__(self):
        self.min_delay: Optional[int] = None

    def tag(self, delay_ms: int) -> bool:
        if self.min_delay is None or delay_ms < self.min_delay:
            self.min_delay = delay_ms
        return delay_ms - self.min_delay <= REALTIME_LIMIT_MS


class OperatorRecord:
    """Everything the station knows about one operator."""

    def __init__(self, op_id: str, config: Optional[Sequence[SensorDescriptor]] = None):
        self.op_id = op_id
        self.config = list(config) if config is not None else default_sensor_table()
        self.phase = Phase.CONNECTED
        self.position: Optional[tuple[float, float]] = None
        self.gps_available = False
        self.battery: Optional[float] = None
        self.history: dict[int, HistoryEntry] = {}
        self.history_seqs: list[int] = []
        self.permanent_losses: list[tuple[int, int]] = []
        self.warning = _ok_state()
        self.events: list[dict] = []  # flag/color/phase transition log
        self.doses: dict[str, DoseTracker] = {}
        self.tagger = RealtimeTagger()
        self.counters = {
            "parity_dropped": 0,
            "duplicates": 0,
            "protocol_violations": 0,
            "timeouts": 0,
            "reconnects": 0,
            "polls": 0,
        }

    def add_history(self, entry: HistoryEntry) -> None:
        self.history[entry.seq] = entry
        bisect.insort(self.history_seqs, entry.seq)

    def is_lost(self, seq: int) -> bool:
        return any(lo <= seq <= hi for lo, hi in self.permanent_losses)

    def record_loss(self, lo: int, hi: int) -> None:
        if lo <= hi:
            self.permanent_losses.append((lo, hi))

    def history_after(self, after_seq: int, limit: int = 500) -> list[HistoryEntry]:
        start = bisect.bisect_right(self.history_seqs, after_seq)
        return [self.history[s] for s in self.history_seqs[start : start + limit]]


def evaluate_warnings(
    record: OperatorRecord,
    frame: SensorFrame,
    thresholds: ThresholdTable,
    now: int,
) -> WarningState:
    """Per-channel threshold codes plus the three global flags for one frame.

    Stateless given the frame and the record's dose accumulators: replaying
    the same frames through a fresh record yields the same state sequence.
    """
    codes: dict[str, WarningCode] = {}
    present: dict[str, Optional[tuple[float, ...]]] = {}
    for block in frame.blocks:
        if block.sensor_id == PEB_SENSOR_ID:
            continue
        present[block.sensor_id] = None if block.stale else decode_values(block)
    peb_ts = frame.device.peb_timestamp

    for sensor_id, names in CHANNELS.items():
        if sensor_id == "gps":
            continue
        values = present.get(sensor_id)
        for i, name in enumerate(names):
            if values is None or i >= len(values):
                codes[name] = WarningCode.STALE
                continue
            entry = thresholds.entries.get(name)
            if entry is None:
                codes[name] = WarningCode.OK
                continue
            value = values[i]
            if entry.dwell_s > 0:
                tracker = record.doses.setdefault(name, DoseTracker(entry.dwell_s * 1000))
                dose = tracker.update(peb_ts, value)
                over = dose >= entry.high * entry.dwell_s * 1000
                codes[name] = WarningCode.HIGH if over else WarningCode.OK
            elif value < entry.low:
                codes[name] = WarningCode.LOW
            elif value > entry.high:
                codes[name] = WarningCode.HIGH
            else:
                codes[name] = WarningCode.OK

    def group_flag(group: frozenset) -> Flag:
        warn = any(codes.get(name) in (WarningCode.LOW, WarningCode.HIGH) for name in group)
        return Flag.WARN if warn else Flag.OK

    fix = frame_gps_fix(frame)
    gps_available = fix is not None
    battery = frame.device.battery_fraction
    battery_ok = battery >= thresholds.battery_floor
    connection_ok = record.phase == Phase.CONNECTED
    equipment = Flag.OK if (battery_ok and connection_ok) else Flag.WARN
    health = group_flag(HEALTH_CHANNELS)
    environment = group_flag(ENVIRONMENT_CHANNELS)
    return WarningState(
        codes,
        health,
        environment,
        equipment,
        icon_color(record.phase, gps_available, health, environment, equipment),
    )


@dataclass
class PollResult:
    accepted: list[HistoryEntry]
    parity_dropped: int = 0
    duplicates: int = 0
    protocol_violation: bool = False
    gap: Optional[GapNotice] = None
    phase_changed: bool = False
    warning_changed: bool = False


class OperatorMonitor:
    """Protocol state machine for one operator; transport supplied by caller.

    Samples may arrive either as StoredSample objects or as
    (seq, peb_ts, ingest_t, frame_bytes) tuples; bytes are parity-checked
    here, which is where corrupted transmissions get dropped and counted.
    """

    def __init__(
        self,
        op_id: str,
        config: Optional[Sequence[SensorDescriptor]] = None,
        thresholds: Optional[ThresholdTable] = None,
        poll_period_ms: int = DEFAULT_POLL_PERIOD_MS,
        timeout_ms: int = DEFAULT_TIMEOUT_MS,
        timeout_threshold: int = DEFAULT_TIMEOUT_THRESHOLD,
        reconnect_interval_ms: int = RECONNECT_INTERVAL_MS,
        on_event: Optional[Callable[[str, dict], None]] = None,
    ):
        self.op_id = op_id
        self.record = OperatorRecord(op_id, config)
        self.thresholds = thresholds or default_thresholds()
        self.poll_period_ms = poll_period_ms
        self.timeout_ms = timeout_ms
        self.timeout_threshold = timeout_threshold
        self.reconnect_interval_ms = reconnect_interval_ms
        self.conn = ConnectionState(op_id)
        self.on_event = on_event
        self._next_request_id = 1

    # -- outgoing --------------------------------------------------------

    def make_query(self, now: int) -> QueryMessage:
        rid, self._next_request_id = self._next_request_id, self._next_request_id + 1
        self.record.counters["polls"] += 1
        if self.conn.phase == Phase.DISCONNECTED:
            return QueryMessage(QueryKind.PING, rid)
        return QueryMessage(QueryKind.GET_DATA, rid, last_seq=self.conn.last_seq_received)

    def contact_interval_ms(self) -> int:
        if self.conn.phase == Phase.DISCONNECTED:
            return self.reconnect_interval_ms
        return self.poll_period_ms

    # -- incoming --------------------------------------------------------

    def on_timeout(self, now: int) -> bool:
        """Returns True when the phase changed."""
        timeouts = self.conn.consecutive_timeouts + 1
        self.record.counters["timeouts"] += 1
        if timeouts >= self.timeout_threshold:
            phase = Phase.DISCONNECTED
        elif timeouts >= 1:
            phase = Phase.PROBING
        else:
            phase = Phase.CONNECTED
        changed = phase != self.conn.phase
        self.conn = replace(self.conn, consecutive_timeouts=timeouts, phase=phase)
        if changed:
            self._apply_phase(phase, now)
        return changed

    def on_reply(self, reply: ReplyMessage, now: int) -> PollResult:
        was_disconnected = self.conn.phase == Phase.DISCONNECTED
        phase_changed = self.conn.phase != Phase.CONNECTED
        self.conn = replace(
            self.conn, phase=Phase.CONNECTED, consecutive_timeouts=0, last_reply_time=now
        )
        if phase_changed:
            if was_disconnected:
                self.record.counters["reconnects"] += 1
            self._apply_phase(Phase.CONNECTED, now)
        result = PollResult(accepted=[], phase_changed=phase_changed)
        if reply.error is not None:
            self.record.counters["protocol_violations"] += 1
            result.protocol_violation = True
            return result
        if reply.gap_notice is not None:
            gap = reply.gap_notice
            result.gap = gap
            self.record.record_loss(gap.requested_after + 1, gap.oldest_available - 1)
            self._emit("gap", {"after": gap.requested_after, "oldest": gap.oldest_available})
        result = self._ingest_samples(reply.samples, now, result)
        self._advance_cursor()
        if result.accepted:
            state_before = self.record.warning
            for entry in result.accepted:
                self._observe(entry, now)
            result.warning_changed = self.record.warning != state_before
        return result

    # -- internals -------------------------------------------------------

    def _ingest_samples(self, samples, now: int, result: PollResult) -> PollResult:
        prev_seq = None
        for raw in samples:
            sample = self._materialize(raw)
            if sample is None:  # parity failure
                result.parity_dropped += 1
                self.record.counters["parity_dropped"] += 1
                prev_seq = None  # unknown ordering across a dropped sample
                continue
            if prev_seq is not None and sample.seq != prev_seq + 1:
                self.record.counters["protocol_violations"] += 1
                result.protocol_violation = True
                break  # discard everything beyond the break
            prev_seq = sample.seq
            if sample.seq in self.record.history:
                result.duplicates += 1
                self.record.counters["duplicates"] += 1
                continue
            delay = now - sample.peb_timestamp
            offset = self.conn.measured_offset_ms
            if offset is None or delay < offset:
                self.conn = replace(self.conn, measured_offset_ms=delay)
            entry = HistoryEntry(
                sample.seq, sample.frame, sample.peb_timestamp, now, self.record.tagger.tag(delay)
            )
            self.record.add_history(entry)
            result.accepted.append(entry)
        return result

    def _materialize(self, raw) -> Optional[StoredSample]:
        if isinstance(raw, StoredSample):
            return raw
        seq, peb_ts, ingest_t, frame_bytes = raw
        from .sensors import deserialize_frame  # local import avoids a cycle at module load

        if not check_parity(frame_bytes):
            return None
        frame = deserialize_frame(frame_bytes, self.record.config, verify_parity=False)
        return StoredSample(seq, frame, peb_ts, ingest_t)

    def _advance_cursor(self) -> None:
        cursor = self.conn.last_seq_received
        while True:
            nxt = cursor + 1
            if nxt in self.record.history or self.record.is_lost(nxt):
                cursor = nxt
            else:
                break
        if cursor != self.conn.last_seq_received:
            self.conn = replace(self.conn, last_seq_received=cursor)

    def _observe(self, entry: HistoryEntry, now: int) -> None:
        frame = entry.frame
        fix = frame_gps_fix(frame)
        if fix is not None:
            self.record.position = (fix[0], fix[1])
        self.record.gps_available = fix is not None
        self.record.battery = frame.device.battery_fraction
        state = evaluate_warnings(self.record, frame, self.thresholds, now)
        self._transition(state, now)

    def _apply_phase(self, phase: Phase, now: int) -> None:
        self.record.phase = phase
        self._emit("phase", {"phase": phase.value})
        w = self.record.warning
        equipment = w.equipment
        if phase != Phase.CONNECTED:
            equipment = Flag.WARN
        elif self.record.battery is None or self.record.battery >= self.thresholds.battery_floor:
            equipment = Flag.OK
        state = WarningState(
            w.codes, w.health, w.environment, equipment,
            icon_color(phase, self.record.gps_available, w.health, w.environment, equipment),
        )
        self._transition(state, now)

    def _transition(self, state: WarningState, now: int) -> None:
        old = self.record.warning
        if (old.flags(), old.icon) != (state.flags(), state.icon):
            self.record.events.append(
                {"t": now, "flags": state.flags(), "icon": state.icon.value}
            )
            self._emit("warning", {"flags": state.flags(), "icon": state.icon.value})
        self.record.warning = state

    def _emit(self, kind: str, payload: dict) -> None:
        if self.on_event is not None:
            self.on_event(kind, {"op_id": self.op_id, **payload})


class MonitorStation:
    """Registry of operator monitors plus a push channel for the gateway."""

    def __init__(self, max_operators: int = DEFAULT_MAX_OPERATORS):
        self.max_operators = max_operators
        self.monitors: dict[str, OperatorMonitor] = {}
        self._subscribers: list[Callable[[dict], None]] = []

    def register(self, op_id: str, **kwargs) -> OperatorMonitor:
        if op_id in self.monitors:
            raise ValueError(f"operator {op_id!r} already registered")
        if len(self.monitors) >= self.max_operators:
            raise ValueError(f"station manages at most {self.max_operators} operators")
        monitor = OperatorMonitor(op_id, on_event=lambda kind, payload: self.publish(kind, payload), **kwargs)
        self.monitors[op_id] = monitor
        return monitor

    def get(self, op_id: str) -> OperatorMonitor:
        if op_id not in self.monitors:
            raise KeyError(op_id)
        return self.monitors[op_id]

    def subscribe(self, callback: Callable[[dict], None]) -> Callable[[], None]:
        self._subscribers.append(callback)

        def unsubscribe():
            if callback in self._subscribers:
                self._subscribers.remove(callback)

        return unsubscribe

    def publish(self, kind: str, payload: dict) -> None:
        event = {"kind": kind, **payload}
        for callback in list(self._subscribers):
            callback(event)
