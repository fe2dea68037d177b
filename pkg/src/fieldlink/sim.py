"""Deterministic event-driven simulation binding nodes, links and monitors.

The loop is a priority queue of timestamped callbacks, with all scheduled
times quantized to a 10 ms grid. Within one timestamp, ingests run before
message events, which run before poll contacts, so a sample produced at a
poll tick is always visible to that poll. All randomness flows from
generators seeded by (scenario seed, session label, component name), which
makes a run a pure function of (scenario, seed).

Sessions of one scenario run back to back on a single global clock, so a
trace's timestamps are non-decreasing from the first record to the last.

Per operator the protocol loop is strictly sequential: one exchange in
flight at a time; a lost query or reply surfaces as a timeout two seconds
later, after which the next contact goes out immediately (polls while the
link is down therefore run at the 2 s timeout cadence; once the monitor
declares the operator disconnected the contact becomes a ping probe).
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .channel import ANTENNAS, LinkModel, LinkPath, Orientation, OutageChain
from .geo import GpsFix, TangentPlane, haversine, reference_position
from .metrics import SessionMetrics, compute_session_metrics, write_bins_csv, write_session_csv, write_summary_csv
from .monitor import MonitorStation, OperatorMonitor, Phase
from .opnode import OperatorNode, QueryMessage, ReplyMessage
from .scenario import OperatorSpec, Scenario, SessionSpec
from .sensors import (
    DeviceState,
    SensorReading,
    apply_query_filter,
    build_frame,
    frame_channels,
    frame_gps_fix,
    serialize_frame,
)
from .trace import EventTrace, build_session_logs, compress_runs, new_trace

BATTERY_DRAIN_PER_MS = 1.0 / (4.5 * 3600 * 1000)  # full to empty in 4.5 h
PRIORITY_INGEST = 0
PRIORITY_MESSAGE = 1
PRIORITY_CONTACT = 2

# channel name -> (base, step, lo, hi) for the seeded random walks
_BASE_VALUES = {
    "breathing_rate_piezo": (15.0, 0.3, 8.0, 30.0),
    "heart_rate": (78.0, 1.0, 55.0, 150.0),
    "breathing_rate": (15.0, 0.3, 8.0, 30.0),
    "body_temp": (36.8, 0.02, 36.0, 38.0),
    "spo2": (97.5, 0.1, 94.0, 100.0),
    "activity_level": (0.4, 0.05, 0.0, 1.0),
    "fall_detected": (0.0, 0.0, 0.0, 0.0),
    "co_ppm": (2.0, 0.2, 0.0, 12.0),
    "external_temp": (24.0, 0.1, 15.0, 40.0),
    "heat_flux": (55.0, 1.0, 20.0, 90.0),
    "motion_level": (0.4, 0.05, 0.0, 1.0),
    "co2_ppm": (600.0, 10.0, 400.0, 1500.0),
}

_SENSOR_VALUES = {
    "piezo": ("breathing_rate_piezo",),
    "vitals": ("heart_rate", "breathing_rate", "body_temp"),
    "spo2": ("spo2",),
    "accel1": ("activity_level",),
    "accel2": ("fall_detected",),
    "co": ("co_ppm",),
    "ext_temp": ("external_temp",),
    "heat_flux": ("heat_flux",),
    "motion": ("motion_level",),
    "co2": ("co2_ppm",),
}


class PebSimulator:
    """Synthesizes the garment's 1 Hz feature values for one operator.

    Timestamps on the wire are absolute simulation time; mobility, value
    overrides and battery drain run on session-local time.
    """

    def __init__(self, spec: OperatorSpec, plane: TangentPlane, rng: random.Random, session_id: int, t0: int):
        self.spec = spec
        self.plane = plane
        self.rng = rng
        self.session_id = session_id
        self.t0 = t0
        self.values = {name: base for name, (base, _, _, _) in _BASE_VALUES.items()}

    def _value(self, name: str, local: int) -> float:
        for ov in self.spec.overrides:
            if ov.channel == name and ov.start_ms <= local < ov.end_ms:
                return ov.value
        base, step, lo, hi = _BASE_VALUES[name]
        if step:
            v = self.values[name] + self.rng.uniform(-step, step)
            self.values[name] = min(hi, max(lo, v))
        return self.values[name]

    def produce(self, now: int):
        local = now - self.t0
        readings = [
            SensorReading(sensor_id, tuple(self._value(name, local) for name in names))
            for sensor_id, names in _SENSOR_VALUES.items()
        ]
        x, y = self.spec.mobility.position_at(local)
        jx, jy = self.rng.gauss(0, 1.5), self.rng.gauss(0, 1.5)
        lat, lon = self.plane.to_latlon(x + jx, y + jy)
        hdop = self.rng.uniform(0.7, 1.2) if self.rng.random() >= 0.01 else self.rng.uniform(1.6, 2.4)
        sats = self.rng.randint(8, 11)
        readings.append(SensorReading("gps", (lat, lon, hdop, float(sats))))
        battery = max(0.0, 1.0 - local * BATTERY_DRAIN_PER_MS)
        device = DeviceState(self.spec.op_id, battery, self.session_id, now)
        return readings, device


@dataclass
class CommandTicket:
    op_id: str
    query: QueryMessage
    done: Callable[[dict], None]


@dataclass
class _OpRuntime:
    spec: OperatorSpec
    node: OperatorNode
    monitor: OperatorMonitor
    peb: PebSimulator
    path: LinkPath
    uplink: LinkModel
    pending_commands: list = field(default_factory=list)


class SessionSim:
    """One session of one scenario: builds the node graph and runs it."""

    def __init__(
        self,
        scenario: Scenario,
        spec: SessionSpec,
        session_index: int,
        t0: int,
        trace: EventTrace,
        station: MonitorStation,
        publish: Optional[Callable[[dict], None]] = None,
        pacer: Optional[Callable[[int, int], None]] = None,
    ):
        self.scenario = scenario
        self.spec = spec
        self.t0 = t0
        self.production_end = t0 + spec.production_ms
        self.session_end = t0 + spec.duration_ms
        self.trace = trace
        self.station = station
        self.publish = publish
        self.pacer = pacer
        self.tick = scenario.tick_ms
        self.now = t0
        self._heap: list = []
        self._counter = 0
        self.plane = TangentPlane(scenario.origin_lat, scenario.origin_lon)
        self.ops: dict[str, _OpRuntime] = {}
        self._corrupt_rng = random.Random(f"{scenario.seed}:{spec.label}:corrupt")
        self._chains_active = False

        station.subscribe(self._on_station_event)
        for op_spec in spec.operators:
            self.ops[op_spec.op_id] = self._build_op(op_spec, session_index)
        self.trace.record(
            t0,
            "session_start",
            label=spec.label,
            ops=[op.op_id for op in spec.operators],
            sampling_period_ms=spec.sampling_period_ms,
            site_distance_m=spec.site_distance_m,
        )

    # -- construction ------------------------------------------------------

    def _build_link(self, link_spec, label_suffix: str) -> LinkModel:
        link = LinkModel(
            name=f"{link_spec.name}:{label_suffix}",
            antenna_a=ANTENNAS[link_spec.antenna_a],
            antenna_b=ANTENNAS[link_spec.antenna_b],
            cal=link_spec.calibration(),
            latency_ms=link_spec.latency_ms,
            corruption_prob=link_spec.corruption_prob,
            outage_windows=[(self.t0 + lo, self.t0 + hi) for lo, hi in link_spec.outage_windows],
            seed=0,
        )
        link.rng = random.Random(f"{self.scenario.seed}:{self.spec.label}:{link.name}")
        if link_spec.mean_good_dwell_s > 0 and link_spec.mean_bad_dwell_s > 0:
            link.chain = OutageChain.from_dwell_means(
                link_spec.mean_good_dwell_s, link_spec.mean_bad_dwell_s, self.tick
            )
            self._chains_active = True
        return link

    def _build_op(self, op_spec: OperatorSpec, session_index: int) -> _OpRuntime:
        node = OperatorNode(device_id=op_spec.op_id, session_id=session_index + 1)
        node.set_period(self.spec.sampling_period_ms)
        monitor = self.station.register(op_spec.op_id, poll_period_ms=self.spec.poll_period_ms)
        peb = PebSimulator(
            op_spec,
            self.plane,
            random.Random(f"{self.scenario.seed}:{self.spec.label}:{op_spec.op_id}:peb"),
            session_index + 1,
            self.t0,
        )
        uplink = self._build_link(op_spec.uplink_override or self.spec.uplink, op_spec.op_id)
        hops = [uplink]
        if self.spec.longlink is not None:
            longlink = self._build_link(self.spec.longlink, op_spec.op_id)
            rt_x, rt_y = self.spec.rt_xy
            longlink.update_geometry(math.hypot(rt_x, rt_y), Orientation.FACING_RM)
            hops.append(longlink)
        return _OpRuntime(op_spec, node, monitor, peb, LinkPath(hops), uplink)

    # -- scheduling --------------------------------------------------------

    def qtick(self, t: float) -> int:
        return int(math.ceil(t / self.tick)) * self.tick

    def schedule(self, t: int, priority: int, fn: Callable[[int], None]) -> None:
        self._counter += 1
        heapq.heappush(self._heap, (t, priority, self._counter, fn))

    def queue_command(self, ticket: CommandTicket) -> None:
        if ticket.op_id not in self.ops:
            raise KeyError(ticket.op_id)
        self.ops[ticket.op_id].pending_commands.append(ticket)

    # -- event bodies --------------------------------------------------------

    def _update_geometry(self, rt: _OpRuntime, t: int) -> None:
        local = t - self.t0
        x, y = rt.spec.mobility.position_at(local)
        orientation = rt.spec.mobility.orientation_at(local)
        if self.spec.longlink is not None:
            rx, ry = self.spec.rt_xy
            rt.uplink.update_geometry(math.hypot(x - rx, y - ry), orientation)
        else:
            rt.uplink.update_geometry(math.hypot(x, y), orientation)

    def _production(self, rt: _OpRuntime) -> Callable[[int], None]:
        def fire(t: int) -> None:
            if t > self.production_end:
                return
            readings, device = rt.peb.produce(t)
            try:
                frame = build_frame(readings, device, rt.node.config)
                frame = apply_query_filter(frame, rt.node.settings.query_filter, rt.node.config)
                seq = rt.node.ingest(frame, t)
            except Exception:
                rt.node.peb_failures += 1
                seq = None
            if seq is not None:
                fix = frame_gps_fix(frame)
                rec = {
                    "op": rt.spec.op_id,
                    "seq": seq,
                    "peb": device.peb_timestamp,
                    "has_fix": fix is not None,
                }
                if fix is not None:
                    rec.update(lat=fix[0], lon=fix[1], hdop=fix[2], sats=fix[3])
                rec["orient"] = rt.spec.mobility.orientation_at(t - self.t0).value
                rec["batt"] = device.battery_fraction
                rec["ch"] = frame_channels(frame)
                self.trace.record(t, "ingest", **rec)
            self.schedule(self.qtick(t + rt.node.settings.sampling_period_ms), PRIORITY_INGEST, fire)

        return fire

    def _step_chains(self, t: int) -> None:
        for rt in self.ops.values():
            for hop in rt.path.hops:
                hop.step_outage(self.tick)
        self.schedule(t + self.tick, PRIORITY_INGEST, self._step_chains)

    def _contact(self, rt: _OpRuntime) -> Callable[[int], None]:
        def fire(t: int) -> None:
            if t > self.session_end:
                return
            self._update_geometry(rt, t)
            if rt.pending_commands:
                self._run_command(rt, rt.pending_commands.pop(0), t, fire)
                return
            query = rt.monitor.make_query(t)
            self.trace.record(t, "poll", op=rt.spec.op_id, qkind=int(query.kind), last_seq=query.last_seq)
            up = rt.path.send(query, t)
            if not up.delivered:
                self.trace.record(t, "q_lost", op=rt.spec.op_id)
                self._schedule_timeout(rt, t, fire)
                return
            reply = rt.node.handle_query(query, up.deliver_at)
            down = rt.path.send(reply, up.deliver_at)
            if not down.delivered:
                self.trace.record(t, "r_lost", op=rt.spec.op_id)
                self._schedule_timeout(rt, t, fire)
                return
            arrive = self.qtick(down.deliver_at)
            shaped, corrupt_seqs = self._shape_reply(rt, reply, down.corrupted)

            def delivered(ta: int) -> None:
                result = rt.monitor.on_reply(shaped, ta)
                rec = {
                    "op": rt.spec.op_id,
                    "seqs": compress_runs([e.seq for e in result.accepted]),
                    "dups": result.duplicates,
                    "parity_dropped": result.parity_dropped,
                    "corrupt": corrupt_seqs,
                    "violation": result.protocol_violation,
                    "cursor": rt.monitor.conn.last_seq_received,
                    "offset": rt.monitor.conn.measured_offset_ms,
                }
                if result.gap is not None:
                    rec["gap"] = [result.gap.requested_after, result.gap.oldest_available]
                if result.accepted:
                    rec["codes"] = {k: v.value for k, v in rt.monitor.record.warning.codes.items()}
                self.trace.record(ta, "deliver", **rec)
                self._publish_update(rt, ta)
                self.schedule(max(self.qtick(t + self.spec.poll_period_ms), ta), PRIORITY_CONTACT, fire)

            self.schedule(arrive, PRIORITY_MESSAGE, delivered)

        return fire

    def _schedule_timeout(self, rt: _OpRuntime, sent_t: int, contact_fire) -> None:
        def timed_out(ta: int) -> None:
            rt.monitor.on_timeout(ta)
            self.trace.record(ta, "timeout", op=rt.spec.op_id, n=rt.monitor.conn.consecutive_timeouts)
            self._publish_update(rt, ta)
            self.schedule(ta, PRIORITY_CONTACT, contact_fire)

        self.schedule(self.qtick(sent_t + rt.monitor.timeout_ms), PRIORITY_MESSAGE, timed_out)

    def _run_command(self, rt: _OpRuntime, ticket: CommandTicket, t: int, contact_fire) -> None:
        """Commands borrow the operator's contact slot and round-trip the
        same links as a poll; a disconnected operator fails fast."""
        if rt.monitor.conn.phase == Phase.DISCONNECTED:
            ticket.done({"ok": False, "error": "operator disconnected"})
            self.trace.record(t, "cmd", op=rt.spec.op_id, qkind=int(ticket.query.kind), ok=False)
            self.schedule(t, PRIORITY_CONTACT, contact_fire)
            return
        up = rt.path.send(ticket.query, t)
        if up.delivered:
            reply = rt.node.handle_query(ticket.query, up.deliver_at)
            down = rt.path.send(reply, up.deliver_at)
            if down.delivered:
                arrive = self.qtick(down.deliver_at)

                def cmd_delivered(ta: int) -> None:
                    ok = reply.ack and reply.error is None
                    ticket.done({"ok": ok, "error": reply.error, "newest_seq": reply.newest_seq})
                    self.trace.record(
                        ta, "cmd", op=rt.spec.op_id, qkind=int(ticket.query.kind), ok=ok, detail=reply.error
                    )
                    self.schedule(max(self.qtick(t + self.spec.poll_period_ms), ta), PRIORITY_CONTACT, contact_fire)

                self.schedule(arrive, PRIORITY_MESSAGE, cmd_delivered)
                return

        def cmd_timed_out(ta: int) -> None:
            ticket.done({"ok": False, "error": "command timed out"})
            self.trace.record(ta, "cmd", op=rt.spec.op_id, qkind=int(ticket.query.kind), ok=False)
            rt.monitor.on_timeout(ta)
            self.trace.record(ta, "timeout", op=rt.spec.op_id, n=rt.monitor.conn.consecutive_timeouts)
            self.schedule(ta, PRIORITY_CONTACT, contact_fire)

        self.schedule(self.qtick(t + rt.monitor.timeout_ms), PRIORITY_MESSAGE, cmd_timed_out)

    def _shape_reply(self, rt: _OpRuntime, reply: ReplyMessage, corrupted: bool):
        """Replace one sample with bit-flipped wire bytes when the channel
        corrupted the message; everything else passes through untouched."""
        if not corrupted or not reply.samples:
            return reply, []
        samples = list(reply.samples)
        idx = self._corrupt_rng.randrange(len(samples))
        victim = samples[idx]
        data = bytearray(serialize_frame(victim.frame, rt.node.config))
        bit = self._corrupt_rng.randrange(len(data) * 8)
        data[bit // 8] ^= 1 << (bit % 8)
        samples[idx] = (victim.seq, victim.peb_timestamp, victim.ingest_time, bytes(data))
        shaped = ReplyMessage(reply.request_id, tuple(samples), reply.gap_notice, newest_seq=reply.newest_seq)
        return shaped, [victim.seq]

    def _publish_update(self, rt: _OpRuntime, t: int) -> None:
        if self.publish is None:
            return
        record = rt.monitor.record
        self.publish(
            {
                "kind": "update",
                "t": t,
                "op_id": rt.spec.op_id,
                "session": self.spec.label,
                "phase": record.phase.value,
                "icon": record.warning.icon.value,
                "flags": record.warning.flags(),
                "position": list(record.position) if record.position else None,
                "battery": record.battery,
                "last_seq": rt.monitor.conn.last_seq_received,
            }
        )

    def _on_station_event(self, event: dict) -> None:
        event = dict(event)
        kind = event.pop("kind")
        op = event.pop("op_id")
        self.trace.record(self.now, kind, op=op, **event)
        if self.publish is not None:
            self.publish({"kind": kind, "t": self.now, "op_id": op, **event})

    # -- main loop -----------------------------------------------------------

    def run(self, event_lock=None) -> None:
        for rt in self.ops.values():
            self.schedule(self.qtick(self.t0 + self.spec.sampling_period_ms), PRIORITY_INGEST, self._production(rt))
            self.schedule(self.qtick(self.t0 + self.spec.poll_period_ms), PRIORITY_CONTACT, self._contact(rt))
        if self._chains_active:
            self.schedule(self.t0 + self.tick, PRIORITY_INGEST, self._step_chains)
        while self._heap and self._heap[0][0] <= self.session_end:
            t, _, _, fn = heapq.heappop(self._heap)
            if self.pacer is not None:
                self.pacer(t, self.now)  # sleeping happens outside the lock
            if event_lock is not None:
                with event_lock:
                    self.now = t
                    fn(t)
            else:
                self.now = t
                fn(t)
        self.now = self.session_end
        self.trace.record(self.session_end, "session_end", label=self.spec.label)


@dataclass
class RunResult:
    scenario: Scenario
    trace: EventTrace
    logs: list
    metrics: list[SessionMetrics]
    stations: dict[str, MonitorStation]
    site_references: dict[str, float]

    def metrics_by_label(self) -> dict[str, SessionMetrics]:
        return {m.label: m for m in self.metrics}


class ScenarioRunner:
    """Runs every session of a scenario against one shared trace."""

    def __init__(
        self,
        scenario: Scenario,
        publish: Optional[Callable[[dict], None]] = None,
        pacer: Optional[Callable[[int, int], None]] = None,
    ):
        scenario.validate()
        self.scenario = scenario
        self.publish = publish
        self.pacer = pacer
        self.trace = new_trace(scenario.name, scenario.seed)
        self.trace.header["origin_lat"] = scenario.origin_lat
        self.trace.header["origin_lon"] = scenario.origin_lon
        self.stations: dict[str, MonitorStation] = {}
        self.current: Optional[SessionSim] = None
        self.event_lock = None  # optional, set by a live server for snapshot reads

    def queue_command(self, ticket: CommandTicket) -> None:
        sim = self.current
        if sim is None:
            ticket.done({"ok": False, "error": "no active session"})
            return
        try:
            sim.queue_command(ticket)
        except KeyError:
            ticket.done({"ok": False, "error": "unknown operator"})

    def run(self) -> RunResult:
        site_refs: dict[str, float] = {}
        t0 = 0
        for index, spec in enumerate(self.scenario.sessions):
            station = MonitorStation(max_operators=max(3, len(spec.operators)))
            self.stations[spec.label] = station
            sim = SessionSim(self.scenario, spec, index, t0, self.trace, station, self.publish, self.pacer)
            self.current = sim
            sim.run(self.event_lock)
            t0 = sim.session_end + self.scenario.tick_ms
            if spec.site_distance_m is not None:
                ref = self._measure_site_reference(spec)
                if ref is not None:
                    site_refs[spec.label] = ref
        self.current = None  # stop accepting commands; snapshots fall back to the last station
        logs = build_session_logs(self.trace, (self.scenario.origin_lat, self.scenario.origin_lon))
        metrics = [compute_session_metrics(log) for log in logs]
        return RunResult(self.scenario, self.trace, logs, metrics, self.stations, site_refs)

    def _measure_site_reference(self, spec: SessionSpec) -> Optional[float]:
        """Site distance as the field crew would measure it: average the
        operator's gated fixes over the first two minutes, then the
        great-circle distance to the station."""
        fixes: list[GpsFix] = []
        in_session = False
        for rec in self.trace.records:
            if rec["kind"] == "session_start":
                in_session = rec["label"] == spec.label
            elif in_session and rec["kind"] == "ingest" and rec.get("has_fix"):
                fixes.append(GpsFix(rec["lat"], rec["lon"], rec["hdop"], rec["sats"], rec["t"]))
        if not fixes:
            return None
        try:
            lat, lon = reference_position(fixes)
        except ValueError:
            return None
        return haversine(lat, lon, self.scenario.origin_lat, self.scenario.origin_lon)


def run_scenario(scenario: Scenario, out_dir=None, publish=None, pacer=None) -> RunResult:
    """Run a scenario and optionally persist trace + results files."""
    runner = ScenarioRunner(scenario, publish=publish, pacer=pacer)
    result = runner.run()
    if out_dir is not None:
        write_results(result, out_dir)
    return result


def write_results(result: RunResult, out_dir) -> None:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.trace.write(out / "trace.jsonl")
    for log in result.logs:
        write_session_csv(log, out / f"session_{log.label.replace(':', '_')}.csv")
    write_summary_csv(result.metrics, out / "summary.csv")
    write_bins_csv(result.metrics, out / "bins.csv")
