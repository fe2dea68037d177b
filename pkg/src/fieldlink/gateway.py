"""HTTP gateway for the monitoring station, plus trace replay.

The console (or curl) talks to a small JSON API; schema identifier
"fieldlink-gateway/1". The same six endpoints are served identically
whether the data source is a live simulation or a recorded trace:

    GET  /operators                      summaries of every operator
    GET  /operators/{id}                 full detail (codes, events, losses)
    GET  /operators/{id}/history?after_seq=&limit=
    GET  /sessions                       per-session delivery metrics
    POST /operators/{id}/period          {"period_ms": int}
    POST /operators/{id}/filter          {"wildcard": bool, "sensors": [...]}
    GET  /events                         server-sent event stream

Commands round-trip through the running simulation to the operator node and
return its ack; in replay mode they answer 409 since history cannot be
steered. Live views and replay views are built by the pairs of functions in
this module and are byte-identical for the same underlying trace, which the
test suite enforces.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional
from urllib.parse import parse_qs, urlparse

from .monitor import MonitorStation, OperatorMonitor, RealtimeTagger
from .opnode import QueryKind, QueryMessage
from .scenario import Scenario
from .sensors import QueryFilter, frame_channels, frame_gps_fix
from .sim import CommandTicket, ScenarioRunner, RunResult
from .trace import EventTrace, expand_runs, load_trace, trace_metrics

SCHEMA = "fieldlink-gateway/1"
HISTORY_DEFAULT_LIMIT = 500


# -- view builders ----------------------------------------------------------


def _counters_dict(c: dict) -> dict:
    return {
        "polls": c["polls"],
        "timeouts": c["timeouts"],
        "parity_dropped": c["parity_dropped"],
        "duplicates": c["duplicates"],
        "protocol_violations": c["protocol_violations"],
        "reconnects": c["reconnects"],
    }


def live_operator_summary(monitor: OperatorMonitor, session: str) -> dict:
    record = monitor.record
    return {
        "op_id": record.op_id,
        "session": session,
        "phase": record.phase.value,
        "icon": record.warning.icon.value,
        "flags": record.warning.flags(),
        "position": list(record.position) if record.position else None,
        "gps_available": record.gps_available,
        "battery": record.battery,
        "last_seq": monitor.conn.last_seq_received,
        "offset_ms": monitor.conn.measured_offset_ms,
        "counters": _counters_dict(record.counters),
    }


def live_operator_detail(monitor: OperatorMonitor, session: str) -> dict:
    detail = live_operator_summary(monitor, session)
    detail["codes"] = {k: v.value for k, v in monitor.record.warning.codes.items()}
    detail["events"] = list(monitor.record.events)
    detail["permanent_losses"] = [list(r) for r in monitor.record.permanent_losses]
    detail["history_len"] = len(monitor.record.history_seqs)
    return detail


def live_history(monitor: OperatorMonitor, after_seq: int, limit: int) -> list[dict]:
    out = []
    for entry in monitor.record.history_after(after_seq, limit):
        fix = frame_gps_fix(entry.frame)
        out.append(
            {
                "seq": entry.seq,
                "peb": entry.peb_timestamp,
                "recv": entry.receive_time,
                "realtime": entry.realtime,
                "position": [fix[0], fix[1]] if fix else None,
                "channels": frame_channels(entry.frame),
            }
        )
    return out


class ReplayOperator:
    """State of one operator reconstructed record by record from a trace."""

    def __init__(self, op_id: str, session: str):
        self.op_id = op_id
        self.session = session
        self.phase = "connected"
        self.icon = "grey"
        self.flags = {"health": "ok", "environment": "ok", "equipment": "ok"}
        self.codes: dict = {}
        self.position = None
        self.gps_available = False
        self.battery = None
        self.last_seq = 0
        self.offset_ms = None
        self.events: list[dict] = []
        self.permanent_losses: list[list[int]] = []
        self.history: list[dict] = []
        self.counters = {
            "polls": 0, "timeouts": 0, "parity_dropped": 0,
            "duplicates": 0, "protocol_violations": 0, "reconnects": 0,
        }
        self.ingests: dict[int, dict] = {}
        self.tagger = RealtimeTagger()
        self._prev_phase = "connected"

    def apply(self, rec: dict) -> None:
        kind = rec["kind"]
        if kind == "ingest":
            self.ingests[rec["seq"]] = rec
        elif kind == "poll":
            self.counters["polls"] += 1
        elif kind == "timeout":
            self.counters["timeouts"] += 1
        elif kind == "phase":
            if rec["phase"] == "connected" and self._prev_phase == "disconnected":
                self.counters["reconnects"] += 1
            self._prev_phase = rec["phase"]
            self.phase = rec["phase"]
        elif kind == "warning":
            self.flags = rec["flags"]
            self.icon = rec["icon"]
            self.events.append({"t": rec["t"], "flags": rec["flags"], "icon": rec["icon"]})
        elif kind == "gap":
            self.permanent_losses.append([rec["after"] + 1, rec["oldest"] - 1])
        elif kind == "deliver":
            self.counters["parity_dropped"] += rec.get("parity_dropped", 0)
            self.counters["duplicates"] += rec.get("dups", 0)
            self.counters["protocol_violations"] += 1 if rec.get("violation") else 0
            self.last_seq = rec["cursor"]
            self.offset_ms = rec["offset"]
            if "codes" in rec:
                self.codes = rec["codes"]
            for seq in expand_runs(rec.get("seqs", [])):
                ing = self.ingests.get(seq)
                if ing is None:
                    continue
                delay = rec["t"] - ing["peb"]
                if ing.get("has_fix"):
                    self.position = [ing["lat"], ing["lon"]]
                self.gps_available = bool(ing.get("has_fix"))
                self.battery = ing["batt"]
                self.history.append(
                    {
                        "seq": seq,
                        "peb": ing["peb"],
                        "recv": rec["t"],
                        "realtime": self.tagger.tag(delay),
                        "position": [ing["lat"], ing["lon"]] if ing.get("has_fix") else None,
                        "channels": ing["ch"],
                    }
                )

    def summary(self) -> dict:
        return {
            "op_id": self.op_id,
            "session": self.session,
            "phase": self.phase,
            "icon": self.icon,
            "flags": dict(self.flags),
            "position": list(self.position) if self.position else None,
            "gps_available": self.gps_available,
            "battery": self.battery,
            "last_seq": self.last_seq,
            "offset_ms": self.offset_ms,
            "counters": _counters_dict(self.counters),
        }

    def detail(self) -> dict:
        out = self.summary()
        out["codes"] = dict(self.codes)
        out["events"] = list(self.events)
        out["permanent_losses"] = [list(r) for r in self.permanent_losses]
        out["history_len"] = len(self.history)
        return out

    def history_after(self, after_seq: int, limit: int) -> list[dict]:
        entries = sorted(self.history, key=lambda e: e["seq"])
        return [e for e in entries if e["seq"] > after_seq][:limit]


# -- providers ----------------------------------------------------------------


class LiveProvider:
    """Serves a running (or finished) simulation."""

    def __init__(self, runner: ScenarioRunner, lock: threading.Lock, speed: float = 1.0):
        self.runner = runner
        self.lock = lock
        self.speed = speed
        self._subscribers: list[queue.Queue] = []
        self._rid = 1_000_000
        self.result: Optional[RunResult] = None

    @property
    def replay_mode(self) -> bool:
        return False

    def publish(self, event: dict) -> None:
        for q in list(self._subscribers):
            q.put(event)

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=1000)
        self._subscribers.append(q)
        return q

    def unsubscribe(self, q) -> None:
        if q in self._subscribers:
            self._subscribers.remove(q)

    def _current_station(self) -> tuple[Optional[str], Optional[MonitorStation]]:
        sim = self.runner.current
        if sim is not None:
            return sim.spec.label, sim.station
        if self.runner.stations:
            label = list(self.runner.stations)[-1]
            return label, self.runner.stations[label]
        return None, None

    def snapshot(self) -> dict:
        with self.lock:
            label, station = self._current_station()
            operators = []
            if station is not None:
                for op_id in sorted(station.monitors):
                    operators.append(live_operator_summary(station.monitors[op_id], label))
            return {
                "schema": SCHEMA,
                "scenario": self.runner.scenario.name,
                "seed": self.runner.scenario.seed,
                "session": label,
                "operators": operators,
            }

    def operator_detail(self, op_id: str) -> Optional[dict]:
        with self.lock:
            label, station = self._current_station()
            if station is None or op_id not in station.monitors:
                return None
            return live_operator_detail(station.monitors[op_id], label)

    def history(self, op_id: str, after_seq: int, limit: int) -> Optional[list[dict]]:
        with self.lock:
            _, station = self._current_station()
            if station is None or op_id not in station.monitors:
                return None
            return live_history(station.monitors[op_id], after_seq, limit)

    def sessions(self) -> list[dict]:
        with self.lock:
            metrics = trace_metrics(self.runner.trace)
        return [
            {
                "label": m.label,
                "expected": m.expected,
                "received_valid": m.received_valid,
                "realtime": m.realtime,
                "pct_correct": m.pct_correct,
                "pct_realtime": m.pct_realtime,
                "offset_ms": m.offset_ms,
            }
            for m in metrics
        ]

    def command(self, op_id: str, kind: str, payload: dict) -> tuple[int, dict]:
        with self.lock:
            label, station = self._current_station()
            known = station is not None and op_id in station.monitors
        if not known:
            return 404, {"error": "unknown operator"}
        if kind == "period":
            try:
                period = int(payload["period_ms"])
            except (KeyError, TypeError, ValueError):
                return 400, {"error": "need integer period_ms"}
            query = QueryMessage(QueryKind.SET_PERIOD, self._next_rid(), period_ms=period)
        elif kind == "filter":
            sensors = payload.get("sensors", [])
            wildcard = bool(payload.get("wildcard", False))
            if not isinstance(sensors, list):
                return 400, {"error": "sensors must be a list"}
            filt = QueryFilter.all() if wildcard else QueryFilter.of(sensors)
            query = QueryMessage(QueryKind.SET_FILTER, self._next_rid(), query_filter=filt)
        else:
            return 400, {"error": f"unknown command {kind}"}

        done = threading.Event()
        outcome: dict = {}

        def resolve(result: dict) -> None:
            outcome.update(result)
            done.set()

        with self.lock:
            self.runner.queue_command(CommandTicket(op_id, query, resolve))
        wall_budget = 10.0 + 30.0 / max(self.speed, 0.01)
        if not done.wait(wall_budget):
            return 504, {"error": "command not processed in time"}
        if outcome.get("ok"):
            return 200, {"ack": True, "newest_seq": outcome.get("newest_seq")}
        error = outcome.get("error") or "command failed"
        status = 503 if "disconnected" in error else 409
        return status, {"ack": False, "error": error}

    def _next_rid(self) -> int:
        self._rid += 1
        return self._rid


class ReplayProvider:
    """Serves a recorded trace; optionally paced for live-looking playback."""

    def __init__(self, trace: EventTrace):
        self.trace = trace
        self.lock = threading.Lock()
        self._subscribers: list[queue.Queue] = []
        self.operators: dict[str, ReplayOperator] = {}
        self.session: Optional[str] = None
        self.applied = 0

    @property
    def replay_mode(self) -> bool:
        return True

    @classmethod
    def from_file(cls, path) -> "ReplayProvider":
        return cls(load_trace(path))

    def apply_all(self) -> "ReplayProvider":
        for rec in self.trace.records:
            self.apply(rec)
        return self

    def apply(self, rec: dict) -> None:
        with self.lock:
            kind = rec["kind"]
            if kind == "session_start":
                self.session = rec["label"]
                self.operators = {op: ReplayOperator(op, rec["label"]) for op in rec.get("ops", [])}
            elif kind == "session_end":
                pass
            else:
                op = rec.get("op")
                if op in self.operators:
                    self.operators[op].apply(rec)
                    if kind in ("deliver", "timeout", "phase", "warning"):
                        view = self.operators[op]
                        self.publish(
                            {
                                "kind": "update",
                                "t": rec["t"],
                                "op_id": op,
                                "session": self.session,
                                "phase": view.phase,
                                "icon": view.icon,
                                "flags": dict(view.flags),
                                "position": list(view.position) if view.position else None,
                                "battery": view.battery,
                                "last_seq": view.last_seq,
                            }
                        )
            self.applied += 1

    def publish(self, event: dict) -> None:
        for q in list(self._subscribers):
            q.put(event)

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=1000)
        self._subscribers.append(q)
        return q

    def unsubscribe(self, q) -> None:
        if q in self._subscribers:
            self._subscribers.remove(q)

    def snapshot(self) -> dict:
        with self.lock:
            return {
                "schema": SCHEMA,
                "scenario": self.trace.header.get("scenario"),
                "seed": self.trace.header.get("seed"),
                "session": self.session,
                "operators": [self.operators[o].summary() for o in sorted(self.operators)],
            }

    def operator_detail(self, op_id: str) -> Optional[dict]:
        with self.lock:
            view = self.operators.get(op_id)
            return view.detail() if view else None

    def history(self, op_id: str, after_seq: int, limit: int) -> Optional[list[dict]]:
        with self.lock:
            view = self.operators.get(op_id)
            return view.history_after(after_seq, limit) if view else None

    def sessions(self) -> list[dict]:
        applied_trace = EventTrace(self.trace.header, self.trace.records[: self.applied])
        return [
            {
                "label": m.label,
                "expected": m.expected,
                "received_valid": m.received_valid,
                "realtime": m.realtime,
                "pct_correct": m.pct_correct,
                "pct_realtime": m.pct_realtime,
                "offset_ms": m.offset_ms,
            }
            for m in trace_metrics(applied_trace)
        ]

    def command(self, op_id: str, kind: str, payload: dict) -> tuple[int, dict]:
        with self.lock:
            known = op_id in self.operators
        if not known:
            return 404, {"error": "unknown operator"}
        return 409, {"ack": False, "error": "commands are not available in replay mode"}


class Replayer:
    """Steps trace records into a ReplayProvider at a chosen speed.

    The sleeper is injectable so tests can assert the pacing without waiting:
    inter-record delays are (t_next - t_prev) / speed milliseconds.
    """

    def __init__(self, provider: ReplayProvider, speed: float = 1.0, sleeper: Callable[[float], None] = time.sleep):
        if speed <= 0:
            raise ValueError("speed must be positive")
        self.provider = provider
        self.speed = speed
        self.sleeper = sleeper

    def run(self) -> None:
        prev_t = None
        for rec in self.provider.trace.records:
            if prev_t is not None and rec["t"] > prev_t:
                self.sleeper((rec["t"] - prev_t) / self.speed / 1000.0)
            prev_t = rec["t"]
            self.provider.apply(rec)


# -- HTTP server --------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    @property
    def provider(self):
        return self.server.provider  # type: ignore[attr-defined]

    def log_message(self, *args):  # quiet by default
        pass

    def _json(self, status: int, payload) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):  # noqa: N802 (stdlib naming)
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        if parts == ["operators"]:
            return self._json(200, self.provider.snapshot())
        if parts == ["sessions"]:
            return self._json(200, {"schema": SCHEMA, "sessions": self.provider.sessions()})
        if parts == ["events"]:
            return self._serve_events()
        if len(parts) == 2 and parts[0] == "operators":
            detail = self.provider.operator_detail(parts[1])
            if detail is None:
                return self._json(404, {"error": "unknown operator"})
            return self._json(200, {"schema": SCHEMA, "operator": detail})
        if len(parts) == 3 and parts[0] == "operators" and parts[2] == "history":
            params = parse_qs(url.query)
            after = int(params.get("after_seq", ["0"])[0])
            limit = min(int(params.get("limit", [str(HISTORY_DEFAULT_LIMIT)])[0]), 5000)
            entries = self.provider.history(parts[1], after, limit)
            if entries is None:
                return self._json(404, {"error": "unknown operator"})
            return self._json(200, {"schema": SCHEMA, "op_id": parts[1], "entries": entries})
        return self._json(404, {"error": "no such endpoint"})

    def do_POST(self):  # noqa: N802
        parts = [p for p in urlparse(self.path).path.split("/") if p]
        if len(parts) == 3 and parts[0] == "operators" and parts[2] in ("period", "filter"):
            length = int(self.headers.get("Content-Length", "0"))
            try:
                payload = json.loads(self.rfile.read(length) or b"{}")
            except json.JSONDecodeError:
                return self._json(400, {"error": "body must be JSON"})
            status, body = self.provider.command(parts[1], parts[2], payload)
            return self._json(status, body)
        return self._json(404, {"error": "no such endpoint"})

    def _serve_events(self) -> None:
        q = self.provider.subscribe()
        try:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            while not self.server.stopping:  # type: ignore[attr-defined]
                try:
                    event = q.get(timeout=0.5)
                except queue.Empty:
                    self.wfile.write(b": keepalive\n\n")
                    self.wfile.flush()
                    continue
                data = json.dumps(event)
                self.wfile.write(f"event: {event.get('kind', 'update')}\ndata: {data}\n\n".encode("utf-8"))
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            pass
        finally:
            self.provider.unsubscribe(q)


class GatewayServer:
    """Threaded HTTP server bound to a provider (live or replay)."""

    def __init__(self, provider, host: str = "127.0.0.1", port: int = 0):
        self._server = ThreadingHTTPServer((host, port), _Handler)
        self._server.daemon_threads = True
        self._server.provider = provider  # type: ignore[attr-defined]
        self._server.stopping = False  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address  # type: ignore[return-value]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> "GatewayServer":
        self._thread.start()
        return self

    def close(self) -> None:
        self._server.stopping = True  # type: ignore[attr-defined]
        self._server.shutdown()
        self._server.server_close()


class LiveRunner:
    """Drives a scenario on a background thread, paced for interactive use."""

    def __init__(self, scenario: Scenario, speed: float = 1.0):
        if speed <= 0:
            raise ValueError("speed must be positive")
        self.lock = threading.Lock()
        self.speed = speed
        self.provider: Optional[LiveProvider] = None
        self.runner = ScenarioRunner(scenario, publish=self._publish, pacer=self._pace)
        self.provider = LiveProvider(self.runner, self.lock, speed)
        self.runner.event_lock = self.lock
        self._thread = threading.Thread(target=self._run, daemon=True)
        self.finished = threading.Event()

    def _publish(self, event: dict) -> None:
        if self.provider is not None:
            self.provider.publish(event)

    def _pace(self, next_t: int, prev_t: int) -> None:
        if next_t > prev_t:
            time.sleep((next_t - prev_t) / self.speed / 1000.0)

    def _run(self) -> None:
        try:
            self.provider.result = self.runner.run()
        finally:
            self.finished.set()

    def start(self) -> "LiveRunner":
        self._thread.start()
        return self

    def wait(self, timeout: Optional[float] = None) -> bool:
        return self.finished.wait(timeout)
