"""Acceptance suite: one test per release criterion, run with `pytest -s -v`.

Each test prints a single [PASS] line on success; a failure raises with the
criterion's name. Budgeted criteria assert their own wall-clock limits.
"""

import dataclasses
import math
import random
import time

import pytest
from scipy.stats import spearmanr

from fieldlink.geo import EARTH_RADIUS_M, GpsFix, TangentPlane, haversine, reference_position
from fieldlink.metrics import SampleRecord, SessionLog, compute_session_metrics
from fieldlink.monitor import OperatorMonitor
from fieldlink.opnode import OperatorNode, QueryKind
from fieldlink.scenario import (
    BUILTIN_SCENARIOS,
    scenario_long_range,
    scenario_outage_lab,
    scenario_short_range,
)
from fieldlink.sensors import DeviceState, SensorReading, build_frame, check_parity, serialize_frame
from fieldlink.sim import run_scenario
from fieldlink.trace import check_conservation

PASS = "\n[PASS] {}"


# -- 1. metrics oracle conformance -------------------------------------------

PRINTED_TALLIES = [
    ("short_range_total", 4979, 5039, 98.81),
    ("short_range_directional", 2644, 2672, 98.95),
    ("short_range_omni", 2335, 2367, 98.65),
    ("long_range_total", 6045, 6149, 98.31),
]


def synthetic_log(received, expected):
    records = [SampleRecord(i + 1, i * 1000, i * 1000 + 120, True) for i in range(received)]
    records += [SampleRecord(received + i + 1, (received + i) * 1000, None, False) for i in range(expected - received)]
    return SessionLog(0, (expected - 1) * 1000, 1.0, records)


def test_metrics_oracle_conformance():
    t0 = time.perf_counter()
    for label, received, expected, printed in PRINTED_TALLIES:
        metrics = compute_session_metrics(synthetic_log(received, expected))
        assert metrics.expected == expected, label
        assert metrics.received_valid == received, label
        assert abs(metrics.pct_correct - printed) <= 0.005, (label, metrics.pct_correct)
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0, f"metrics oracle took {elapsed:.3f}s, budget 1s"
    print(PASS.format(f"metrics oracle conformance: 4 printed percentages reproduced in {elapsed*1000:.0f} ms"))


# -- 2. store-and-forward guarantee -------------------------------------------

def random_outage_schedule(rng, production_s=120.0):
    """1-3 bursts of 2-45 s each, fully inside the production window, with
    3 s of clean air between them; ~5% of schedules are outage-free."""
    if rng.random() < 0.05:
        return []
    windows = []
    cursor = 3.0
    for _ in range(rng.randint(1, 3)):
        start = cursor + rng.uniform(0.0, 15.0)
        length = rng.uniform(2.0, 45.0)
        if start + length > production_s - 8.0:
            break
        windows.append((start, start + length))
        cursor = start + length + 3.0
    return windows


def test_store_and_forward_guarantee():
    t0 = time.perf_counter()
    runs = outage_runs = 0
    for seed in range(1000):
        rng = random.Random(seed * 7919 + 13)
        windows = random_outage_schedule(rng)
        result = run_scenario(scenario_outage_lab(windows, seed=seed, production_s=120, drain_s=20))
        (conservation,) = check_conservation(result.trace).values()
        assert conservation.balanced, (seed, conservation)
        assert conservation.lost_permanently == 0, (seed, windows)
        assert conservation.delivered_valid == conservation.produced, (seed, windows)
        (m,) = result.metrics
        if windows:  # every generated outage is >= 2 s
            outage_runs += 1
            assert m.pct_realtime < m.pct_correct, (seed, windows, m)
        runs += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0, f"store-and-forward sweep took {elapsed:.1f}s, budget 120s"
    print(PASS.format(
        f"store-and-forward guarantee: {runs} seeded schedules, {outage_runs} with outages, "
        f"0 losses, realtime<correct throughout, {elapsed:.1f}s"
    ))


# -- 3. recovery bound ---------------------------------------------------------

def make_frame(ts):
    return build_frame([SensorReading("co", (2.0,))], DeviceState("op-1", 0.9, 1, ts))


@pytest.mark.parametrize("gap", [1, 49, 50, 51, 100, 500])
def test_recovery_bound(gap):
    node = OperatorNode()
    monitor = OperatorMonitor("op-1")
    t = 0
    for i in range(5):  # establish a synced baseline
        t += 1000
        node.ingest(make_frame(t), t)
        monitor.on_reply(node.handle_query(monitor.make_query(t), t), t)
    for i in range(gap):  # the injected gap: production without contact
        t += 1000
        node.ingest(make_frame(t), t)
    polls = 0
    while monitor.conn.last_seq_received < node.buffer.newest_seq:
        t += 1000
        query = monitor.make_query(t)
        assert query.kind == QueryKind.GET_DATA
        monitor.on_reply(node.handle_query(query, t), t)
        polls += 1
        assert polls <= math.ceil(gap / 50)
    assert polls == math.ceil(gap / 50)
    print(PASS.format(f"recovery bound: gap {gap} cleared in exactly {polls} polls"))


# -- 4. fetch_after brute-force equivalence -------------------------------------

def test_fetch_after_brute_force_equivalence():
    frame = make_frame(0)
    checked = 0
    for capacity in (1, 7, 50, 100, 200):
        for total in range(0, 201):
            node = OperatorNode(capacity=capacity)
            for i in range(total):
                node.ingest(frame, i)
            retained = list(range(max(1, total - capacity + 1), total + 1))
            oldest = retained[0] if retained else None
            newest = retained[-1] if retained else 0
            for last_seq in range(0, newest + 6):
                got_samples, got_gap = node.fetch_after(last_seq)
                want = [s for s in retained if s > last_seq][:50]
                assert [s.seq for s in got_samples] == want, (capacity, total, last_seq)
                want_gap = oldest is not None and last_seq + 1 < oldest
                assert (got_gap is not None) == want_gap, (capacity, total, last_seq)
                if got_gap is not None:
                    assert (got_gap.requested_after, got_gap.oldest_available) == (last_seq, oldest)
                checked += 1
    print(PASS.format(f"fetch_after equivalence: {checked} (buffer, last_seq) cases match the oracle"))


# -- 5. parity ------------------------------------------------------------------

def random_frame(rng):
    readings = [
        SensorReading("co", (rng.uniform(0, 100),)),
        SensorReading("vitals", (rng.uniform(40, 200), rng.uniform(5, 40), rng.uniform(35, 40))),
        SensorReading("gps", (rng.uniform(-80, 80), rng.uniform(-179, 179), rng.uniform(0.5, 3), float(rng.randint(4, 12)))),
    ]
    device = DeviceState(f"op-{rng.randint(1, 9)}", rng.random(), rng.randint(0, 9), rng.randint(0, 10**7))
    return build_frame(readings, device)


def test_parity_detection():
    rng = random.Random(424242)
    flips = 0
    for _ in range(50):
        data = serialize_frame(random_frame(rng))
        assert check_parity(data)
        for byte_idx in range(len(data)):
            for bit in range(8):
                tampered = bytearray(data)
                tampered[byte_idx] ^= 1 << bit
                assert not check_parity(bytes(tampered)), (byte_idx, bit)
                flips += 1
    # documented miss: even-weight flips in one bit column cancel out
    data = serialize_frame(random_frame(rng))
    missed = 0
    for bit in range(8):
        tampered = bytearray(data)
        tampered[11] ^= 1 << bit
        tampered[97] ^= 1 << bit
        if check_parity(bytes(tampered)):
            missed += 1
    assert missed == 8
    print(PASS.format(f"parity: {flips} single-bit flips all detected; double-flip miss demonstrated"))


# -- 6. calibrated long-range ----------------------------------------------------

def test_calibrated_long_range():
    result = run_scenario(scenario_long_range())
    by_label = result.metrics_by_label()
    sites = [(s.site_distance_m, by_label[s.label]) for s in result.scenario.sessions]
    for d, m in sites:
        assert m.pct_correct >= 98.0, (d, m.pct_correct)
    near = by_label["site_280m"].pct_realtime
    far = by_label["site_1081m"].pct_realtime
    assert far < near, (far, near)
    beyond = [(d, m.pct_realtime) for d, m in sites if d >= 900.0]
    assert len(beyond) >= 3
    rho = spearmanr([d for d, _ in beyond], [rt for _, rt in beyond]).statistic
    assert rho <= -0.8, (beyond, rho)
    rho_all = spearmanr([d for d, _ in sites], [m.pct_realtime for _, m in sites]).statistic
    print(PASS.format(
        f"calibrated long-range: min correct {min(m.pct_correct for _, m in sites):.2f}%, "
        f"realtime {near:.1f}% at 280 m vs {far:.1f}% at 1081 m, "
        f"beyond-knee Spearman {rho:.2f} (all-site {rho_all:.2f})"
    ))


# -- 7. short-range asymmetry -----------------------------------------------------

def aggregate_case_bins(result):
    bins = {}
    for m in result.metrics:
        for b in m.bins:
            key = (b.lo_m, b.orientation)
            exp, rec, rt = bins.get(key, (0, 0, 0))
            bins[key] = (exp + b.expected, rec + b.received_valid, rt + b.realtime)
    return bins


@pytest.mark.parametrize("case", ["omni", "directional"])
def test_short_range_asymmetry(case):
    result = run_scenario(scenario_short_range(case))
    for m in result.metrics:
        assert m.pct_correct >= 98.0, (m.label, m.pct_correct)
    bins = aggregate_case_bins(result)
    matched = 0
    for lo in sorted({lo for lo, _ in bins}):
        back = bins.get((lo, "back_to_rm"))
        facing = bins.get((lo, "facing_rm"))
        if not back or not facing or back[0] < 30 or facing[0] < 30:
            continue
        back_rt = 100.0 * back[2] / back[0]
        facing_rt = 100.0 * facing[2] / facing[0]
        assert back_rt < facing_rt, (case, lo, back_rt, facing_rt)
        matched += 1
    assert matched >= 10, f"only {matched} matched bins"
    print(PASS.format(f"short-range asymmetry ({case}): back < facing realtime in all {matched} matched 25 m bins"))


# -- 8. haversine and reference gating ---------------------------------------------

def vector_oracle(lat1, lon1, lat2, lon2):
    def unit(lat, lon):
        phi, lmb = math.radians(lat), math.radians(lon)
        return (math.cos(phi) * math.cos(lmb), math.cos(phi) * math.sin(lmb), math.sin(phi))

    a, b = unit(lat1, lon1), unit(lat2, lon2)
    cross = (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])
    dot = sum(x * y for x, y in zip(a, b))
    return math.atan2(math.sqrt(sum(c * c for c in cross)), dot) * EARTH_RADIUS_M


def test_haversine_and_reference_gating():
    rng = random.Random(99)
    plane = TangentPlane(45.7, 9.9)
    worst = 0.0
    for _ in range(10_000):
        a = plane.to_latlon(rng.uniform(0, 1400), rng.uniform(0, 1400))
        b = plane.to_latlon(rng.uniform(0, 1400), rng.uniform(0, 1400))
        got = haversine(a[0], a[1], b[0], b[1])
        want = vector_oracle(a[0], a[1], b[0], b[1])
        if want > 1.0:
            worst = max(worst, abs(got - want) / want)
            assert abs(got - want) / want <= 0.001
        else:
            assert abs(got - want) <= 0.01
    fixes = [
        GpsFix(45.0, 9.0, 0.9, 9, 0),
        GpsFix(45.5, 9.5, 1.5, 9, 1000),   # hdop exactly at the gate: excluded
        GpsFix(46.0, 10.0, 2.5, 9, 2000),  # hdop above the gate: excluded
        GpsFix(47.0, 11.0, 0.9, 6, 3000),  # too few satellites: excluded
        GpsFix(45.2, 9.2, 1.4, 7, 4000),
    ]
    lat, lon = reference_position(fixes)
    assert lat == pytest.approx((45.0 + 45.2) / 2)
    assert lon == pytest.approx((9.0 + 9.2) / 2)
    print(PASS.format(f"haversine within 0.1% of the oracle on 10,000 pairs (worst {worst*100:.4f}%); gated fixes excluded"))


# -- 9. determinism -----------------------------------------------------------------

def test_determinism_byte_identical(tmp_path):
    for name, build in BUILTIN_SCENARIOS.items():
        dirs = []
        for run in ("a", "b"):
            out = tmp_path / name / run
            run_scenario(build(), out_dir=out)
            dirs.append(out)
        files_a = sorted(p.name for p in dirs[0].iterdir())
        files_b = sorted(p.name for p in dirs[1].iterdir())
        assert files_a == files_b
        for fname in files_a:
            assert (dirs[0] / fname).read_bytes() == (dirs[1] / fname).read_bytes(), (name, fname)
    print(PASS.format(f"determinism: byte-identical trace and results across reruns of {len(BUILTIN_SCENARIOS)} builtin scenarios"))


# -- 10. primary suite standalone ----------------------------------------------------

def test_primary_suite_needs_no_console():
    import fieldlink
    import pathlib
    import re

    src = pathlib.Path(fieldlink.__file__).parent
    offenders = []
    for path in src.rglob("*.py"):
        text = path.read_text()
        if re.search(r"^\s*(from|import)\s+\S*frontend", text, re.MULTILINE):
            offenders.append(path.name)
    assert not offenders, offenders
    print(PASS.format("primary suite standalone: no module imports the console"))
