"""Operator-worn node: sequence tagging, bounded sample buffer, query handling.

The node ingests one aggregated frame per sampling period, tags it with a
monotone sequence number and keeps it in a bounded ring sized to the
equipment's battery autonomy (4 h at 1 Hz). Remote clients never subscribe
to a stream; they send the sequence number of the last sample they hold and
the node answers with the next batch, capped at 50 samples. That pull model
is what lets the link drop and recover without losing data.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Optional, Sequence

from .sensors import (
    QueryFilter,
    SensorDescriptor,
    SensorFrame,
    apply_query_filter,
    build_frame,
    default_sensor_table,
)

REPLY_BATCH_LIMIT = 50
MIN_SAMPLING_PERIOD_MS = 100
DEFAULT_CAPACITY = 14_400  # 4 h x 3600 s x 1 Hz


class NodeStoppedError(RuntimeError):
    """Raised when a stopped node is asked to ingest."""


class QueryKind(IntEnum):
    GET_DATA = 1
    SET_PERIOD = 2
    SET_FILTER = 3
    PING = 4


@dataclass(frozen=True)
class StoredSample:
    seq: int
    frame: SensorFrame
    peb_timestamp: int
    ingest_time: int


@dataclass
class NodeSettings:
    sampling_period_ms: int = 1000
    query_filter: QueryFilter = field(default_factory=QueryFilter.all)


@dataclass(frozen=True)
class QueryMessage:
    kind: QueryKind
    request_id: int
    last_seq: int = 0
    period_ms: Optional[int] = None
    query_filter: Optional[QueryFilter] = None


@dataclass(frozen=True)
class GapNotice:
    requested_after: int
    oldest_available: int


@dataclass(frozen=True)
class ReplyMessage:
    request_id: int
    samples: tuple[StoredSample, ...] = ()
    gap_notice: Optional[GapNotice] = None
    ack: bool = False
    newest_seq: int = 0
    error: Optional[str] = None


class SampleBuffer:
    """Bounded, seq-contiguous window of stored samples; oldest-first eviction."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self._items: deque[StoredSample] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def append(self, sample: StoredSample) -> None:
        self._items.append(sample)  # maxlen evicts the oldest

    @property
    def oldest_seq(self) -> Optional[int]:
        return self._items[0].seq if self._items else None

    @property
    def newest_seq(self) -> Optional[int]:
        return self._items[-1].seq if self._items else None

    def slice_after(self, last_seq: int, limit: int) -> list[StoredSample]:
        """Up to `limit` samples with seq > last_seq, in seq order."""
        if not self._items:
            return []
        start = max(last_seq + 1, self._items[0].seq)
        offset = start - self._items[0].seq
        if offset >= len(self._items):
            return []
        out = []
        for i in range(offset, min(offset + limit, len(self._items))):
            out.append(self._items[i])
        return out


class OperatorNode:
    """One operator's communication node.

    Thread contract: one sampler writer plus any number of concurrent query
    handlers. A single lock guards the buffer and settings; every critical
    section is a handful of list operations, so the sampler is never blocked
    for longer than one query.
    """

    def __init__(
        self,
        config: Optional[Sequence[SensorDescriptor]] = None,
        capacity: int = DEFAULT_CAPACITY,
        device_id: str = "op-1",
        session_id: int = 1,
    ):
        self.config = list(config) if config is not None else default_sensor_table()
        self.device_id = device_id
        self.session_id = session_id
        self.buffer = SampleBuffer(capacity)
        self.settings = NodeSettings()
        self.peb_failures = 0
        self._running = True
        self._lock = threading.Lock()

    # -- lifecycle -------------------------------------------------------

    def stop(self) -> None:
        self._running = False

    def start(self) -> None:
        self._running = True

    @property
    def running(self) -> bool:
        return self._running

    # -- ingest ----------------------------------------------------------

    def ingest(self, frame: SensorFrame, now: int) -> int:
        """Store a frame under the next sequence number; returns that seq."""
        if not self._running:
            raise NodeStoppedError("node is stopped")
        with self._lock:
            newest = self.buffer.newest_seq
            seq = 1 if newest is None else newest + 1
            self.buffer.append(StoredSample(seq, frame, frame.device.peb_timestamp, now))
            return seq

    # -- queries ---------------------------------------------------------

    def fetch_after(self, last_seq: int, limit: int = REPLY_BATCH_LIMIT):
        """Batch of retained samples following last_seq, plus a gap notice.

        The batch starts at last_seq + 1 when that sample is still retained;
        if it was evicted, the batch starts at the oldest retained sample and
        a GapNotice reports the permanent loss. Before the first ingest there
        is nothing to compare against, so no gap is reported.
        """
        with self._lock:
            samples = self.buffer.slice_after(last_seq, limit)
            oldest = self.buffer.oldest_seq
            gap = None
            if oldest is not None and last_seq + 1 < oldest:
                gap = GapNotice(last_seq, oldest)
            return samples, gap

    def set_period(self, period_ms: int) -> None:
        if period_ms < MIN_SAMPLING_PERIOD_MS:
            raise ValueError(f"sampling period below {MIN_SAMPLING_PERIOD_MS} ms")
        with self._lock:
            self.settings.sampling_period_ms = int(period_ms)

    def set_filter(self, filt: QueryFilter) -> None:
        filt.validate_against(self.config)
        with self._lock:
            self.settings.query_filter = filt

    def handle_query(self, query: QueryMessage, now: int = 0) -> ReplyMessage:
        """Serve one request; malformed requests get an error reply, never silence."""
        newest = self.buffer.newest_seq or 0
        if query.kind == QueryKind.GET_DATA:
            if query.last_seq < 0:
                return ReplyMessage(query.request_id, newest_seq=newest, error="last_seq must be >= 0")
            samples, gap = self.fetch_after(query.last_seq)
            return ReplyMessage(query.request_id, tuple(samples), gap, newest_seq=self.buffer.newest_seq or 0)
        if query.kind == QueryKind.SET_PERIOD:
            if query.period_ms is None:
                return ReplyMessage(query.request_id, newest_seq=newest, error="missing period_ms")
            try:
                self.set_period(query.period_ms)
            except ValueError as exc:
                return ReplyMessage(query.request_id, newest_seq=newest, error=str(exc))
            return ReplyMessage(query.request_id, ack=True, newest_seq=newest)
        if query.kind == QueryKind.SET_FILTER:
            if query.query_filter is None:
                return ReplyMessage(query.request_id, newest_seq=newest, error="missing filter")
            try:
                self.set_filter(query.query_filter)
            except ValueError as exc:
                return ReplyMessage(query.request_id, newest_seq=newest, error=str(exc))
            return ReplyMessage(query.request_id, ack=True, newest_seq=newest)
        if query.kind == QueryKind.PING:
            return ReplyMessage(query.request_id, ack=True, newest_seq=newest)
        return ReplyMessage(query.request_id, newest_seq=newest, error=f"unknown kind {query.kind}")


class Sampler:
    """Drives the node's ingest loop against a frame source on simulated time.

    The source is called once per sampling period; returning None (or
    raising) models an aggregator hiccup: the tick is skipped and the
    equipment-degraded counter goes up. Settings changes take effect when
    the next tick is scheduled.
    """

    def __init__(self, node: OperatorNode, source: Callable[[int], Optional[list]], start_ms: int = 0):
        self.node = node
        self.source = source
        self.next_due = start_ms + node.settings.sampling_period_ms

    def step(self, now: int) -> Optional[int]:
        """Ingest if a tick is due at `now`; returns the new seq or None."""
        if now < self.next_due:
            return None
        seq = None
        try:
            produced = self.source(now)
        except Exception:
            produced = None
        if produced is None:
            self.node.peb_failures += 1
        else:
            readings, device = produced
            frame = build_frame(readings, device, self.node.config)
            frame = apply_query_filter(frame, self.node.settings.query_filter, self.node.config)
            seq = self.node.ingest(frame, now)
        self.next_due = now + self.node.settings.sampling_period_ms
        return seq

    def run(self, times) -> list[tuple[int, int]]:
        """Step through an iterable of timestamps; returns (time, seq) ingests."""
        out = []
        for t in times:
            seq = self.step(t)
            if seq is not None:
                out.append((t, seq))
        return out
