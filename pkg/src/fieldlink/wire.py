"""Binary wire protocol for the operator node's query server.

Every message is length-prefixed:

    length      u32 BE, byte count of everything after this field
    kind        u8
    request_id  u32 BE
    body        kind-specific, below

Query kinds (client -> node):

    0x01 GET_DATA    body = last_seq u64 BE
    0x02 SET_PERIOD  body = period_ms u32 BE
    0x03 SET_FILTER  body = wildcard u8 (1/0), count u8,
                     then per sensor: id_len u8 + utf-8 id
    0x04 PING        empty body

Reply kinds (node -> client):

    0x81 DATA   body = sample_count u8, then per sample:
                    seq u64, peb_timestamp u64, ingest_time u64,
                    frame_len u32, serialized frame bytes
                then gap u8 (1/0),
                    [requested_after u64, oldest_available u64] when gap = 1,
                then newest_seq u64
    0x82 ACK    body = ack u8, newest_seq u64
    0x8F ERROR  body = newest_seq u64, msg_len u16 BE, utf-8 message

All integers are big-endian and unsigned. This layout is frozen by
golden-bytes tests; bump the kind byte space rather than mutating it.
"""

from __future__ import annotations

import socket
import socketserver
import struct
import threading
from typing import Optional, Sequence

from .opnode import GapNotice, OperatorNode, QueryKind, QueryMessage, ReplyMessage, StoredSample
from .sensors import QueryFilter, SensorDescriptor, default_sensor_table, deserialize_frame, serialize_frame

KIND_DATA_REPLY = 0x81
KIND_ACK_REPLY = 0x82
KIND_ERROR_REPLY = 0x8F

MAX_MESSAGE_BYTES = 4 * 1024 * 1024


class WireError(ValueError):
    """Bytes on the wire do not decode to a valid message."""


def encode_query(query: QueryMessage) -> bytes:
    body = b""
    if query.kind == QueryKind.GET_DATA:
        body = struct.pack(">Q", query.last_seq)
    elif query.kind == QueryKind.SET_PERIOD:
        body = struct.pack(">I", query.period_ms)
    elif query.kind == QueryKind.SET_FILTER:
        filt = query.query_filter
        parts = [struct.pack(">BB", 1 if filt.wildcard else 0, 0 if filt.wildcard else len(filt.sensors))]
        if not filt.wildcard:
            for sid in sorted(filt.sensors):
                raw = sid.encode("utf-8")
                parts.append(struct.pack(">B", len(raw)) + raw)
        body = b"".join(parts)
    payload = struct.pack(">BI", int(query.kind), query.request_id) + body
    return struct.pack(">I", len(payload)) + payload


def decode_query(payload: bytes) -> QueryMessage:
    """Decode the post-length portion of a query message."""
    if len(payload) < 5:
        raise WireError("query shorter than header")
    kind_byte, request_id = struct.unpack_from(">BI", payload, 0)
    body = payload[5:]
    try:
        kind = QueryKind(kind_byte)
    except ValueError:
        raise WireError(f"unknown query kind 0x{kind_byte:02x}")
    if kind == QueryKind.GET_DATA:
        if len(body) != 8:
            raise WireError("GET_DATA body must be 8 bytes")
        (last_seq,) = struct.unpack(">Q", body)
        return QueryMessage(kind, request_id, last_seq=last_seq)
    if kind == QueryKind.SET_PERIOD:
        if len(body) != 4:
            raise WireError("SET_PERIOD body must be 4 bytes")
        (period,) = struct.unpack(">I", body)
        return QueryMessage(kind, request_id, period_ms=period)
    if kind == QueryKind.SET_FILTER:
        if len(body) < 2:
            raise WireError("SET_FILTER body truncated")
        wildcard, count = struct.unpack_from(">BB", body, 0)
        pos = 2
        sensors = set()
        for _ in range(count):
            if pos >= len(body):
                raise WireError("SET_FILTER id list truncated")
            n = body[pos]
            pos += 1
            sensors.add(body[pos : pos + n].decode("utf-8"))
            pos += n
        filt = QueryFilter.all() if wildcard else QueryFilter.of(sensors)
        return QueryMessage(kind, request_id, query_filter=filt)
    return QueryMessage(kind, request_id)


def _encode_sample(sample: StoredSample, config) -> bytes:
    frame_bytes = serialize_frame(sample.frame, config)
    return struct.pack(">QQQI", sample.seq, sample.peb_timestamp, sample.ingest_time, len(frame_bytes)) + frame_bytes


def encode_reply(reply: ReplyMessage, config: Optional[Sequence[SensorDescriptor]] = None) -> bytes:
    config = list(config) if config is not None else default_sensor_table()
    if reply.error is not None:
        raw = reply.error.encode("utf-8")
        payload = struct.pack(">BIQH", KIND_ERROR_REPLY, reply.request_id, reply.newest_seq, len(raw)) + raw
    elif reply.ack and not reply.samples:
        payload = struct.pack(">BIBQ", KIND_ACK_REPLY, reply.request_id, 1, reply.newest_seq)
    else:
        parts = [struct.pack(">BIB", KIND_DATA_REPLY, reply.request_id, len(reply.samples))]
        for sample in reply.samples:
            parts.append(_encode_sample(sample, config))
        if reply.gap_notice is not None:
            parts.append(struct.pack(">BQQ", 1, reply.gap_notice.requested_after, reply.gap_notice.oldest_available))
        else:
            parts.append(struct.pack(">B", 0))
        parts.append(struct.pack(">Q", reply.newest_seq))
        payload = b"".join(parts)
    return struct.pack(">I", len(payload)) + payload


def decode_reply(payload: bytes, config: Optional[Sequence[SensorDescriptor]] = None) -> ReplyMessage:
    config = list(config) if config is not None else default_sensor_table()
    if len(payload) < 5:
        raise WireError("reply shorter than header")
    kind, request_id = struct.unpack_from(">BI", payload, 0)
    pos = 5
    if kind == KIND_ERROR_REPLY:
        newest, msg_len = struct.unpack_from(">QH", payload, pos)
        pos += 10
        return ReplyMessage(request_id, newest_seq=newest, error=payload[pos : pos + msg_len].decode("utf-8"))
    if kind == KIND_ACK_REPLY:
        ack, newest = struct.unpack_from(">BQ", payload, pos)
        return ReplyMessage(request_id, ack=bool(ack), newest_seq=newest)
    if kind != KIND_DATA_REPLY:
        raise WireError(f"unknown reply kind 0x{kind:02x}")
    count = payload[pos]
    pos += 1
    samples = []
    for _ in range(count):
        seq, peb_ts, ingest_t, frame_len = struct.unpack_from(">QQQI", payload, pos)
        pos += 28
        frame = deserialize_frame(payload[pos : pos + frame_len], config)
        pos += frame_len
        samples.append(StoredSample(seq, frame, peb_ts, ingest_t))
    gap = None
    if payload[pos]:
        after, oldest = struct.unpack_from(">QQ", payload, pos + 1)
        gap = GapNotice(after, oldest)
        pos += 17
    else:
        pos += 1
    (newest,) = struct.unpack_from(">Q", payload, pos)
    return ReplyMessage(request_id, tuple(samples), gap, newest_seq=newest)


def read_message(sock: socket.socket) -> Optional[bytes]:
    """One length-prefixed payload off a socket, or None on clean EOF."""
    header = _read_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_MESSAGE_BYTES:
        raise WireError(f"message of {length} bytes exceeds limit")
    payload = _read_exact(sock, length)
    if payload is None:
        raise WireError("connection closed mid-message")
    return payload


def _read_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None if not buf else None
        buf.extend(chunk)
    return bytes(buf)


class _QueryHandler(socketserver.BaseRequestHandler):
    def handle(self):
        node: OperatorNode = self.server.node  # type: ignore[attr-defined]
        while True:
            try:
                payload = read_message(self.request)
            except (WireError, OSError):
                return
            if payload is None:
                return
            try:
                query = decode_query(payload)
                reply = node.handle_query(query)
            except WireError as exc:
                request_id = struct.unpack_from(">I", payload, 1)[0] if len(payload) >= 5 else 0
                reply = ReplyMessage(request_id, newest_seq=node.buffer.newest_seq or 0, error=str(exc))
            try:
                self.request.sendall(encode_reply(reply, node.config))
            except OSError:
                return


class LoopbackServer:
    """Concurrent TCP server speaking the wire protocol for one node.

    Exists for protocol conformance testing; the simulator bypasses sockets.
    """

    def __init__(self, node: OperatorNode, host: str = "127.0.0.1", port: int = 0):
        self._server = socketserver.ThreadingTCPServer((host, port), _QueryHandler, bind_and_activate=True)
        self._server.daemon_threads = True
        self._server.node = node  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address  # type: ignore[return-value]

    def start(self) -> "LoopbackServer":
        self._thread.start()
        return self

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()


class NodeClient:
    """Blocking request/reply client for a loopback node server."""

    def __init__(self, address: tuple[str, int], config: Optional[Sequence[SensorDescriptor]] = None, timeout: float = 5.0):
        self.config = list(config) if config is not None else default_sensor_table()
        self._sock = socket.create_connection(address, timeout=timeout)
        self._next_request_id = 1

    def request(self, query: QueryMessage) -> ReplyMessage:
        self._sock.sendall(encode_query(query))
        payload = read_message(self._sock)
        if payload is None:
            raise WireError("server closed the connection")
        return decode_reply(payload, self.config)

    def send_raw(self, data: bytes) -> ReplyMessage:
        self._sock.sendall(data)
        payload = read_message(self._sock)
        if payload is None:
            raise WireError("server closed the connection")
        return decode_reply(payload, self.config)

    def get_data(self, last_seq: int) -> ReplyMessage:
        rid, self._next_request_id = self._next_request_id, self._next_request_id + 1
        return self.request(QueryMessage(QueryKind.GET_DATA, rid, last_seq=last_seq))

    def ping(self) -> ReplyMessage:
        rid, self._next_request_id = self._next_request_id, self._next_request_id + 1
        return self.request(QueryMessage(QueryKind.PING, rid))

    def close(self) -> None:
        self._sock.close()
