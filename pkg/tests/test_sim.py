import dataclasses
import filecmp
import json
import math
from pathlib import Path

import pytest

from fieldlink.scenario import (
    LONG_RANGE_SITES,
    MobilitySpec,
    load_scenario,
    resolve_scenario,
    scenario_long_range,
    scenario_outage_lab,
    scenario_short_range,
)
from fieldlink.sim import run_scenario
from fieldlink.trace import TraceError, check_conservation, load_trace, trace_metrics


def small_lossy_scenario(seed=4):
    """Fast scenario with real loss + corruption for conservation checks."""
    sc = scenario_outage_lab([(15, 22), (40, 48)], seed=seed, production_s=60, drain_s=10)
    uplink = dataclasses.replace(sc.sessions[0].uplink, p_near=0.9, corruption_prob=0.02)
    session = dataclasses.replace(sc.sessions[0], uplink=uplink)
    return dataclasses.replace(sc, sessions=(session,))


class TestDeterminism:
    def test_same_seed_byte_identical_outputs(self, tmp_path):
        for d in ("a", "b"):
            run_scenario(small_lossy_scenario(seed=9), out_dir=tmp_path / d)
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert "trace.jsonl" in names and "summary.csv" in names
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    def test_different_seed_differs(self, tmp_path):
        run_scenario(small_lossy_scenario(seed=1), out_dir=tmp_path / "a")
        run_scenario(small_lossy_scenario(seed=2), out_dir=tmp_path / "b")
        assert (tmp_path / "a" / "trace.jsonl").read_bytes() != (tmp_path / "b" / "trace.jsonl").read_bytes()


class TestLosslessLimit:
    def test_no_outage_perfect_delivery(self):
        sc = scenario_outage_lab([], seed=0, production_s=60, drain_s=5)
        result = run_scenario(sc)
        m = result.metrics[0]
        assert m.pct_correct == 100.0
        assert m.expected == 60


class TestConservation:
    @pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
    def test_every_sample_accounted_for(self, seed):
        result = run_scenario(small_lossy_scenario(seed=seed))
        for key, c in check_conservation(result.trace).items():
            assert c.balanced, (key, c)
            assert c.produced == 60

    def test_lossy_run_still_delivers_everything_buffered(self):
        # outages shorter than the horizon and a drain tail: nothing lost
        result = run_scenario(scenario_outage_lab([(10, 40)], seed=7, production_s=90, drain_s=15))
        c = list(check_conservation(result.trace).values())[0]
        assert c.lost_permanently == 0
        assert c.delivered_valid == c.produced


class TestStoreAndForward:
    def test_outage_backlog_recovered_not_realtime(self):
        result = run_scenario(scenario_outage_lab([(20, 50)], seed=3, production_s=90, drain_s=15))
        m = result.metrics[0]
        assert m.pct_correct == 100.0
        assert m.pct_realtime < m.pct_correct
        # samples produced inside the outage arrive late
        log = result.logs[0]
        late = [r for r in log.records if 20_000 <= r.peb_timestamp < 50_000]
        assert late
        delays = [r.receive_timestamp - r.peb_timestamp for r in late if r.receive_timestamp]
        assert max(delays) > 10_000


class TestScenarioBuilders:
    def test_short_range_antenna_cases(self):
        omni = scenario_short_range("omni")
        assert omni.sessions[0].uplink.antenna_b == "omni"
        directional = scenario_short_range("directional")
        assert directional.sessions[0].uplink.antenna_b == "directional_90x15"
        with pytest.raises(ValueError):
            scenario_short_range("sideways")

    def test_short_range_four_reps_each(self):
        assert len(scenario_short_range("omni").sessions) == 4

    def test_short_range_trace_reaches_400m(self):
        mob = scenario_short_range("omni").sessions[0].operators[0].mobility
        dists = [math.hypot(*mob.position_at(t)) for t in range(0, 600_000, 1000)]
        assert max(dists) == pytest.approx(400.0, abs=mob.speed_m_s)

    def test_short_range_orientation_out_and_back(self):
        mob = scenario_short_range("omni").sessions[0].operators[0].mobility
        assert mob.orientation_at(60_000).value == "back_to_rm"  # outbound
        assert mob.orientation_at(500_000).value == "facing_rm"  # inbound

    def test_long_range_site_count_and_span(self):
        sc = scenario_long_range()
        assert len(sc.sessions) == 11
        distances = [s.site_distance_m for s in sc.sessions]
        assert min(distances) == 280 and max(distances) == 1081
        assert all(s.longlink is not None for s in sc.sessions)

    def test_long_range_expected_per_site(self):
        sc = scenario_long_range()
        result = run_scenario(
            dataclasses.replace(sc, sessions=sc.sessions[:1])
        )
        assert result.metrics[0].expected == pytest.approx(601, abs=1)

    def test_builtin_resolution(self):
        assert resolve_scenario("long_range").name == "long_range"
        with pytest.raises(FileNotFoundError):
            resolve_scenario("no_such_scenario.ini")


class TestScenarioFile:
    def test_load_ini_round_trip(self, tmp_path):
        text = """
[session]
name = lab42
seed = 9
duration_s = 30
drain_s = 5
origin_lat = 44.5
origin_lon = 8.9

[nodes]
operators = op-a, op-b
rt = yes
rt_x = 0
rt_y = 300

[link.uplink]
antenna_a = textile_front
antenna_b = omni
latency_ms = 5
outage_windows = 5-8

[link.longlink]
antenna_a = directional_30x30
antenna_b = directional_90x15
p_near = 0.9

[mobility.op-a]
waypoints = 0,2 ; 0,200
speed_m_s = 2.0
orientation = auto

[overrides.op-b]
co_ppm = 10-20:150
"""
        path = tmp_path / "lab.ini"
        path.write_text(text)
        sc = load_scenario(path)
        assert sc.name == "lab42" and sc.seed == 9
        session = sc.sessions[0]
        assert [op.op_id for op in session.operators] == ["op-a", "op-b"]
        assert session.longlink.p_near == 0.9
        assert session.uplink.outage_windows == ((5000, 8000),)
        assert session.operators[1].overrides[0].value == 150.0
        result = run_scenario(sc)
        assert len(result.logs) == 2  # one per operator

    def test_missing_session_section_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[nodes]\noperators = op-1\n")
        with pytest.raises(ValueError):
            load_scenario(path)


class TestTraceFiles:
    def test_trace_round_trip(self, tmp_path):
        result = run_scenario(small_lossy_scenario())
        path = tmp_path / "t.jsonl"
        result.trace.write(path)
        loaded = load_trace(path)
        assert loaded.header == result.trace.header
        assert loaded.records == result.trace.records

    def test_replayed_metrics_identical(self, tmp_path):
        result = run_scenario(small_lossy_scenario())
        path = tmp_path / "t.jsonl"
        result.trace.write(path)
        replayed = trace_metrics(load_trace(path))
        assert replayed == result.metrics

    def test_truncated_file_reports_byte_offset(self, tmp_path):
        result = run_scenario(small_lossy_scenario())
        path = tmp_path / "t.jsonl"
        result.trace.write(path)
        data = path.read_bytes()
        (tmp_path / "cut.jsonl").write_bytes(data[: len(data) // 2])
        with pytest.raises(TraceError) as err:
            load_trace(tmp_path / "cut.jsonl")
        assert err.value.byte_offset > 0
        assert "byte" in str(err.value)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"nonsense": true}\n')
        with pytest.raises(TraceError):
            load_trace(path)

    def test_timestamps_non_decreasing_across_sessions(self):
        sc = scenario_short_range("omni")
        sc = dataclasses.replace(sc, sessions=sc.sessions[:2])
        result = run_scenario(sc)
        stamps = [r["t"] for r in result.trace.records]
        assert stamps == sorted(stamps)

    def test_every_delivery_matches_a_transmission(self):
        result = run_scenario(small_lossy_scenario())
        polls = sum(1 for r in result.trace.records if r["kind"] == "poll")
        delivers = sum(1 for r in result.trace.records if r["kind"] == "deliver")
        losses = sum(1 for r in result.trace.records if r["kind"] in ("q_lost", "r_lost"))
        assert delivers + losses == polls


class TestUpdateStream:
    def test_icon_change_published_within_one_poll_interval(self):
        events = []
        sc = scenario_outage_lab([(20, 40)], seed=1, production_s=70, drain_s=10)
        run_scenario(sc, publish=events.append)
        # find the grey transition caused by the outage
        warnings = [e for e in events if e["kind"] == "warning"]
        grey = [e for e in warnings if e["icon"] == "grey" and e["t"] > 20_000]
        assert grey, "outage should force a grey icon"
        updates = [e for e in events if e["kind"] == "update"]
        # every icon flip seen across updates has a warning event at the same time
        last_icon = {}
        for u in updates:
            key = u["op_id"]
            if key in last_icon and u["icon"] != last_icon[key]:
                matching = [
                    w for w in warnings
                    if w["op_id"] == key and w["icon"] == u["icon"] and abs(w["t"] - u["t"]) <= 1000
                ]
                assert matching, f"icon change at t={u['t']} lacks a timely warning event"
            last_icon[key] = u["icon"]
        # recovery publishes a green again
        assert any(e["icon"] == "green" and e["t"] > 40_000 for e in warnings)


class TestSiteReference:
    def test_measured_distance_close_to_configured(self):
        sc = scenario_long_range()
        sc = dataclasses.replace(sc, sessions=sc.sessions[:2])
        result = run_scenario(sc)
        for label, measured in result.site_references.items():
            configured = next(s.site_distance_m for s in sc.sessions if s.label == label)
            assert measured == pytest.approx(configured, abs=2.0)
