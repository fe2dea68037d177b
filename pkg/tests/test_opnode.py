import threading

import pytest
from hypothesis import given, settings, strategies as st

from fieldlink.opnode import (
    GapNotice,
    NodeStoppedError,
    OperatorNode,
    QueryKind,
    QueryMessage,
    REPLY_BATCH_LIMIT,
    Sampler,
    StoredSample,
)
from fieldlink.sensors import DeviceState, QueryFilter, SensorReading, build_frame, frame_payload_length

CONFIG = None  # default table


def make_frame(ts=0):
    device = DeviceState("op-1", 0.9, 1, ts)
    return build_frame([SensorReading("co", (2.0,))], device)


def loaded_node(first_seq, last_seq, capacity=None):
    """Node whose buffer retains exactly [first_seq, last_seq]."""
    capacity = capacity or (last_seq - first_seq + 1)
    node = OperatorNode(capacity=capacity)
    for i in range(last_seq):
        node.ingest(make_frame(ts=i * 1000), now=i * 1000)
    assert node.buffer.oldest_seq == first_seq
    assert node.buffer.newest_seq == last_seq
    return node


def reference_fetch(produced_seqs, retained, last_seq, limit=REPLY_BATCH_LIMIT):
    """Brute-force oracle: plain filter + sort + take-limit over a list."""
    kept = sorted(s for s in retained if s > last_seq)
    batch = kept[:limit]
    gap = None
    if retained and last_seq + 1 < min(retained):
        gap = (last_seq, min(retained))
    return batch, gap


class TestIngest:
    def test_first_seq_is_one(self):
        node = OperatorNode()
        assert node.ingest(make_frame(), 0) == 1

    def test_capacity_eviction(self):
        node = OperatorNode(capacity=14_400)
        frame = make_frame()
        for i in range(14_400):
            node.ingest(frame, i)
        assert node.buffer.oldest_seq == 1
        seq = node.ingest(frame, 14_400)
        assert seq == 14_401
        assert node.buffer.oldest_seq == 2  # seq 1 evicted
        assert len(node.buffer) == 14_400

    def test_range_after_six_ingests(self):
        node = OperatorNode()
        for i in range(6):
            node.ingest(make_frame(), i)
        assert (node.buffer.oldest_seq, node.buffer.newest_seq) == (1, 6)

    def test_stopped_node_refuses(self):
        node = OperatorNode()
        node.stop()
        with pytest.raises(NodeStoppedError):
            node.ingest(make_frame(), 0)

    def test_peb_timestamps_non_decreasing(self):
        node = OperatorNode()
        for i in range(5):
            node.ingest(make_frame(ts=i * 1000), i * 1000)
        stamps = [s.peb_timestamp for s in node.buffer._items]
        assert stamps == sorted(stamps)


class TestFetchAfter:
    def test_mid_buffer_window(self):
        node = loaded_node(1, 100)
        samples, gap = node.fetch_after(10)
        assert [s.seq for s in samples] == list(range(11, 61))
        assert gap is None

    def test_caught_up_client(self):
        node = loaded_node(1, 100)
        samples, gap = node.fetch_after(100)
        assert samples == [] and gap is None

    def test_evicted_range_carries_gap_notice(self):
        node = loaded_node(51, 150, capacity=100)
        samples, gap = node.fetch_after(10)
        assert [s.seq for s in samples] == list(range(51, 101))
        assert gap == GapNotice(10, 51)

    def test_client_ahead_of_newest(self):
        node = loaded_node(1, 20)
        samples, gap = node.fetch_after(25)
        assert samples == [] and gap is None

    def test_empty_buffer(self):
        node = OperatorNode()
        samples, gap = node.fetch_after(0)
        assert samples == [] and gap is None

    @settings(max_examples=120, deadline=None)
    @given(
        total=st.integers(min_value=1, max_value=120),
        capacity=st.integers(min_value=1, max_value=120),
        last_seq=st.integers(min_value=0, max_value=130),
    )
    def test_matches_reference_oracle(self, total, capacity, last_seq):
        node = OperatorNode(capacity=capacity)
        frame = make_frame()
        for i in range(total):
            node.ingest(frame, i)
        retained = set(range(max(1, total - capacity + 1), total + 1))
        samples, gap = node.fetch_after(last_seq)
        want_batch, want_gap = reference_fetch(range(1, total + 1), retained, last_seq)
        assert [s.seq for s in samples] == want_batch
        assert (gap and (gap.requested_after, gap.oldest_available)) == want_gap


class TestHandleQuery:
    def test_get_data_reply(self):
        node = loaded_node(1, 100)
        reply = node.handle_query(QueryMessage(QueryKind.GET_DATA, 7, last_seq=10))
        assert reply.request_id == 7
        assert [s.seq for s in reply.samples] == list(range(11, 61))
        assert reply.gap_notice is None
        assert reply.newest_seq == 100

    def test_no_stale_seqs_without_gap_notice(self):
        node = loaded_node(51, 150, capacity=100)
        reply = node.handle_query(QueryMessage(QueryKind.GET_DATA, 1, last_seq=10))
        assert reply.gap_notice is not None
        reply2 = node.handle_query(QueryMessage(QueryKind.GET_DATA, 2, last_seq=60))
        assert all(s.seq > 60 for s in reply2.samples)
        assert reply2.gap_notice is None

    def test_negative_last_seq_gets_error_reply(self):
        node = loaded_node(1, 10)
        reply = node.handle_query(QueryMessage(QueryKind.GET_DATA, 3, last_seq=-1))
        assert reply.error and not reply.samples

    def test_ping_acks_with_newest(self):
        node = loaded_node(1, 42)
        reply = node.handle_query(QueryMessage(QueryKind.PING, 9))
        assert reply.ack and reply.newest_seq == 42

    def test_set_period_ack(self):
        node = OperatorNode()
        reply = node.handle_query(QueryMessage(QueryKind.SET_PERIOD, 1, period_ms=2000))
        assert reply.ack
        assert node.settings.sampling_period_ms == 2000

    def test_set_period_below_floor_rejected(self):
        node = OperatorNode()
        reply = node.handle_query(QueryMessage(QueryKind.SET_PERIOD, 1, period_ms=50))
        assert not reply.ack and reply.error
        assert node.settings.sampling_period_ms == 1000  # unchanged

    def test_set_filter_ack_and_validation(self):
        node = OperatorNode()
        ok = node.handle_query(QueryMessage(QueryKind.SET_FILTER, 1, query_filter=QueryFilter.of({"gps"})))
        assert ok.ack
        bad = node.handle_query(QueryMessage(QueryKind.SET_FILTER, 2, query_filter=QueryFilter.of({"zzz"})))
        assert bad.error and not bad.ack
        assert node.settings.query_filter == QueryFilter.of({"gps"})


def peb_source(position=None):
    def produce(now):
        device = DeviceState("op-1", 0.9, 1, now)
        return [SensorReading("co", (2.0,)), SensorReading("gps", (45.0, 9.0, 0.9, 8.0))], device

    return produce


class TestSampler:
    def test_sixty_second_run_at_default_period(self):
        node = OperatorNode()
        sampler = Sampler(node, peb_source())
        ingests = sampler.run(range(0, 60_001, 10))
        assert len(ingests) == 60
        assert [seq for _, seq in ingests] == list(range(1, 61))

    def test_two_second_period_halves_ingests(self):
        node = OperatorNode()
        node.set_period(2000)
        sampler = Sampler(node, peb_source())
        assert len(sampler.run(range(0, 60_001, 10))) == 30

    def test_period_change_mid_run(self):
        node = OperatorNode()
        sampler = Sampler(node, peb_source())
        count = 0
        for t in range(0, 60_001, 10):
            if t == 30_000:
                node.set_period(500)
            if sampler.step(t) is not None:
                count += 1
        assert count == 30 + 60

    def test_source_failure_skips_and_degrades(self):
        node = OperatorNode()
        calls = []

        def flaky(now):
            calls.append(now)
            if len(calls) == 2:
                return None
            return peb_source()(now)

        sampler = Sampler(node, flaky)
        ingests = sampler.run(range(0, 5001, 10))
        assert len(ingests) == 4
        assert node.peb_failures == 1

    def test_filter_shrinks_subsequent_frames(self):
        node = OperatorNode()
        node.set_filter(QueryFilter.of({"gps"}))
        sampler = Sampler(node, peb_source())
        sampler.run(range(0, 1001, 10))
        stored = node.buffer._items[-1]
        assert frame_payload_length(stored.frame, node.config) == 62 + 84

    def test_period_spacing_after_change(self):
        node = OperatorNode()
        node.set_period(2000)
        sampler = Sampler(node, peb_source())
        ingests = sampler.run(range(0, 10_001, 10))
        times = [t for t, _ in ingests]
        assert all(b - a == 2000 for a, b in zip(times, times[1:]))


class TestConcurrency:
    def test_readers_never_see_torn_buffer(self):
        node = OperatorNode(capacity=500)
        frame = make_frame()
        stop = threading.Event()
        violations = []

        def writer():
            t = 0
            while not stop.is_set():
                node.ingest(frame, t)
                t += 1

        def reader():
            while not stop.is_set():
                reply = node.handle_query(QueryMessage(QueryKind.GET_DATA, 1, last_seq=0))
                seqs = [s.seq for s in reply.samples]
                if seqs != sorted(seqs) or (seqs and seqs != list(range(seqs[0], seqs[0] + len(seqs)))):
                    violations.append(seqs)

        threads = [threading.Thread(target=writer)] + [threading.Thread(target=reader) for _ in range(3)]
        for th in threads:
            th.start()
        import time

        time.sleep(0.4)
        stop.set()
        for th in threads:
            th.join()
        assert not violations
