"""Wearable sensor network data model.

The on-garment aggregator polls every sensor once per second and packs the
per-sensor feature payloads, plus its own device-status block, into a single
byte string closed by one XOR parity byte. This module owns the sensor
registry, the frame layout and the frame-level operations (build, parity
check, filtering, serialization).

Frame layout, per block in table order:

    header byte   bit 7 = stale flag, bits 0-6 = sensor index in the config
    payload       rate_bytes_per_s - 1 bytes

Non-PEB payloads carry a value-count byte followed by big-endian float64
values, zero padded. The PEB payload carries the device id (16 bytes),
battery fraction (f64), status code (u32) and timestamp (u64), zero padded.
The final byte of a serialized frame is the XOR of all preceding bytes.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


class Garment(str, Enum):
    IG = "IG"
    OG = "OG"
    BOOT = "BOOT"
    PEB = "PEB"


class Bus(str, Enum):
    ZIGBEE = "zigbee"
    RS485 = "rs485"
    DEDICATED = "dedicated"
    INTERNAL = "internal"


class ConfigError(ValueError):
    """A reading, filter or descriptor disagrees with the sensor configuration."""


class FrameError(ValueError):
    """A serialized frame cannot be parsed back into a SensorFrame."""


PEB_SENSOR_ID = "peb"
PEB_RATE_BYTES = 84

# Named value channels carried by each sensor block, in payload order.
CHANNELS: dict[str, tuple[str, ...]] = {
    "piezo": ("breathing_rate_piezo",),
    "vitals": ("heart_rate", "breathing_rate", "body_temp"),
    "spo2": ("spo2",),
    "accel1": ("activity_level",),
    "accel2": ("fall_detected",),
    "co": ("co_ppm",),
    "ext_temp": ("external_temp",),
    "heat_flux": ("heat_flux",),
    "motion": ("motion_level",),
    "gps": ("lat", "lon", "hdop", "satellites"),
    "co2": ("co2_ppm",),
}


@dataclass(frozen=True)
class SensorDescriptor:
    sensor_id: str
    garment: Garment
    function: str
    bus: Bus
    rate_bytes_per_s: int

    def __post_init__(self):
        if self.rate_bytes_per_s <= 0:
            raise ConfigError(f"{self.sensor_id}: rate must be positive")


def default_sensor_table() -> list[SensorDescriptor]:
    """The stock 12-row configuration of the second garment prototype."""
    rows = [
        ("piezo", Garment.IG, "breathing rate", Bus.ZIGBEE, 24),
        ("vitals", Garment.IG, "heart rate, breathing rate and body temperature", Bus.ZIGBEE, 68),
        ("spo2", Garment.IG, "oxygen saturation", Bus.ZIGBEE, 24),
        ("accel1", Garment.OG, "inactivity sensor", Bus.RS485, 24),
        ("accel2", Garment.OG, "inactivity/fall sensor", Bus.RS485, 24),
        ("co", Garment.OG, "carbon monoxide concentration", Bus.RS485, 24),
        ("ext_temp", Garment.OG, "environmental temperature", Bus.RS485, 16),
        ("heat_flux", Garment.OG, "heat flux across the jacket", Bus.RS485, 16),
        ("motion", Garment.OG, "inactivity sensor (textile)", Bus.RS485, 24),
        ("gps", Garment.OG, "absolute position", Bus.DEDICATED, 62),
        ("co2", Garment.BOOT, "carbon dioxide concentration", Bus.ZIGBEE, 20),
        (PEB_SENSOR_ID, Garment.PEB, "device ID, status, batteries, timestamp", Bus.INTERNAL, PEB_RATE_BYTES),
    ]
    return [SensorDescriptor(*row) for row in rows]


def validate_config(config: Sequence[SensorDescriptor]) -> None:
    ids = [d.sensor_id for d in config]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate sensor_id in configuration")
    if PEB_SENSOR_ID not in ids:
        raise ConfigError("configuration must include the PEB block")
    if len(config) > 128:
        raise ConfigError("at most 128 sensors (7-bit block index)")


def load_sensor_table(path) -> list[SensorDescriptor]:
    """Read a configuration from tabular text: id,garment,bus,rate[,function]."""
    table = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            sensor_id, garment, bus, rate = (c.strip() for c in row[:4])
            function = row[4].strip() if len(row) > 4 else ""
            table.append(SensorDescriptor(sensor_id, Garment(garment), function, Bus(bus), int(rate)))
    validate_config(table)
    return table


def dump_sensor_table(config: Sequence[SensorDescriptor], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        fh.write("# sensor_id,garment,bus,rate_bytes_per_s,function\n")
        for d in config:
            writer.writerow([d.sensor_id, d.garment.value, d.bus.value, d.rate_bytes_per_s, d.function])


def packaged_sensor_table_path() -> Path:
    return Path(__file__).parent / "data" / "sensor_table.csv"


@dataclass(frozen=True)
class DeviceState:
    """Aggregator status block: identity, charge, status code, clock."""

    device_id: str
    battery_fraction: float
    status_code: int
    peb_timestamp: int  # ms since session midnight

    def __post_init__(self):
        if not 0.0 <= self.battery_fraction <= 1.0:
            raise ValueError("battery_fraction outside [0, 1]")
        if len(self.device_id.encode("utf-8")) > 16:
            raise ValueError("device_id longer than 16 encoded bytes")


@dataclass(frozen=True)
class SensorReading:
    sensor_id: str
    values: tuple[float, ...]


def gps_reading(lat: float, lon: float, hdop: float, satellites: int) -> SensorReading:
    """GPS readings always carry fix quality: HDOP and visible-satellite count."""
    return SensorReading("gps", (float(lat), float(lon), float(hdop), float(satellites)))


@dataclass(frozen=True)
class Block:
    sensor_id: str
    stale: bool
    payload: bytes  # rate_bytes_per_s - 1 bytes, header excluded


@dataclass(frozen=True)
class SensorFrame:
    blocks: tuple[Block, ...]
    device: DeviceState
    parity: int


@dataclass(frozen=True)
class QueryFilter:
    """Sensor selection applied at frame-build time; PEB is always retained."""

    wildcard: bool
    sensors: frozenset[str]

    @classmethod
    def all(cls) -> "QueryFilter":
        return cls(True, frozenset())

    @classmethod
    def of(cls, sensor_ids: Iterable[str]) -> "QueryFilter":
        return cls(False, frozenset(sensor_ids))

    def validate_against(self, config: Sequence[SensorDescriptor]) -> None:
        if self.wildcard:
            return
        known = {d.sensor_id for d in config}
        unknown = self.sensors - known
        if unknown:
            raise ConfigError(f"filter names unknown sensors: {sorted(unknown)}")

    def matches(self, sensor_id: str) -> bool:
        return self.wildcard or sensor_id == PEB_SENSOR_ID or sensor_id in self.sensors


def _xor(data: bytes) -> int:
    if not data:
        return 0
    return int(np.bitwise_xor.reduce(np.frombuffer(data, dtype=np.uint8)))


def _encode_values(values: Sequence[float], payload_len: int) -> bytes:
    capacity = (payload_len - 1) // 8
    if len(values) > capacity:
        raise ConfigError(f"{len(values)} values do not fit a {payload_len}-byte payload")
    body = struct.pack(f">B{len(values)}d", len(values), *values)
    return body.ljust(payload_len, b"\x00")


def decode_values(block: Block) -> tuple[float, ...]:
    """Recover the float values packed into a non-PEB block payload."""
    count = block.payload[0]
    return struct.unpack_from(f">{count}d", block.payload, 1)


def _encode_device(device: DeviceState, payload_len: int) -> bytes:
    body = device.device_id.encode("utf-8").ljust(16, b"\x00")
    body += struct.pack(">dIQ", device.battery_fraction, device.status_code, device.peb_timestamp)
    return body.ljust(payload_len, b"\x00")


def _decode_device(payload: bytes) -> DeviceState:
    device_id = payload[:16].rstrip(b"\x00").decode("utf-8")
    battery, status, ts = struct.unpack_from(">dIQ", payload, 16)
    return DeviceState(device_id, battery, status, ts)


def build_frame(
    readings: Sequence[SensorReading],
    device: DeviceState,
    config: Optional[Sequence[SensorDescriptor]] = None,
) -> SensorFrame:
    """Aggregate one second of readings into a frame.

    Emits one block per configured sensor in table order. A sensor with no
    reading gets a zero-filled payload with the stale bit set, so the frame
    length is a constant of the configuration. Raises ConfigError for a
    reading whose sensor_id is not configured, or for duplicate readings.
    """
    config = list(config) if config is not None else default_sensor_table()
    validate_config(config)
    by_id: dict[str, SensorReading] = {}
    known = {d.sensor_id for d in config}
    for reading in readings:
        if reading.sensor_id not in known:
            raise ConfigError(f"reading for unconfigured sensor {reading.sensor_id!r}")
        if reading.sensor_id in by_id:
            raise ConfigError(f"duplicate reading for sensor {reading.sensor_id!r}")
        if reading.sensor_id == "gps" and len(reading.values) != len(CHANNELS["gps"]):
            raise ConfigError("gps reading must carry lat, lon, hdop and satellite count")
        by_id[reading.sensor_id] = reading

    blocks = []
    for desc in config:
        payload_len = desc.rate_bytes_per_s - 1
        if desc.sensor_id == PEB_SENSOR_ID:
            blocks.append(Block(PEB_SENSOR_ID, False, _encode_device(device, payload_len)))
        elif desc.sensor_id in by_id:
            blocks.append(Block(desc.sensor_id, False, _encode_values(by_id[desc.sensor_id].values, payload_len)))
        else:
            blocks.append(Block(desc.sensor_id, True, b"\x00" * payload_len))
    frame = SensorFrame(tuple(blocks), device, 0)
    body = _serialize_blocks(frame, config)
    return SensorFrame(frame.blocks, device, _xor(body))


def _serialize_blocks(frame: SensorFrame, config: Sequence[SensorDescriptor]) -> bytes:
    index = {d.sensor_id: i for i, d in enumerate(config)}
    out = bytearray()
    for block in frame.blocks:
        header = index[block.sensor_id] | (0x80 if block.stale else 0)
        out.append(header)
        out.extend(block.payload)
    return bytes(out)


def serialize_frame(frame: SensorFrame, config: Optional[Sequence[SensorDescriptor]] = None) -> bytes:
    config = list(config) if config is not None else default_sensor_table()
    body = _serialize_blocks(frame, config)
    return body + bytes([_xor(body)])


def check_parity(data: bytes) -> bool:
    """True iff the XOR of all bytes but the last equals the last byte."""
    if len(data) < 2:
        raise ValueError("need at least two bytes to parity-check")
    return _xor(data[:-1]) == data[-1]


def deserialize_frame(
    data: bytes,
    config: Optional[Sequence[SensorDescriptor]] = None,
    verify_parity: bool = True,
) -> SensorFrame:
    config = list(config) if config is not None else default_sensor_table()
    if len(data) < 2:
        raise FrameError("frame too short")
    if verify_parity and not check_parity(data):
        raise FrameError("parity mismatch")
    body = data[:-1]
    blocks = []
    device = None
    pos = 0
    while pos < len(body):
        header = body[pos]
        idx = header & 0x7F
        stale = bool(header & 0x80)
        if idx >= len(config):
            raise FrameError(f"block index {idx} outside configuration")
        desc = config[idx]
        payload = bytes(body[pos + 1 : pos + desc.rate_bytes_per_s])
        if len(payload) != desc.rate_bytes_per_s - 1:
            raise FrameError(f"truncated block for {desc.sensor_id}")
        pos += desc.rate_bytes_per_s
        blocks.append(Block(desc.sensor_id, stale, payload))
        if desc.sensor_id == PEB_SENSOR_ID:
            device = _decode_device(payload)
    if device is None:
        raise FrameError("frame is missing the PEB block")
    return SensorFrame(tuple(blocks), device, data[-1])


def apply_query_filter(
    frame: SensorFrame,
    filt: QueryFilter,
    config: Optional[Sequence[SensorDescriptor]] = None,
) -> SensorFrame:
    """Drop blocks not selected by the filter; the PEB block always stays.

    The parity byte is recomputed for the reduced frame. Wildcard filters
    return the frame unchanged.
    """
    config = list(config) if config is not None else default_sensor_table()
    filt.validate_against(config)
    if filt.wildcard:
        return frame
    kept = tuple(b for b in frame.blocks if filt.matches(b.sensor_id))
    reduced = SensorFrame(kept, frame.device, 0)
    return SensorFrame(kept, frame.device, _xor(_serialize_blocks(reduced, config)))


def frame_payload_length(frame: SensorFrame, config: Optional[Sequence[SensorDescriptor]] = None) -> int:
    """Serialized length excluding the parity byte."""
    config = list(config) if config is not None else default_sensor_table()
    rates = {d.sensor_id: d.rate_bytes_per_s for d in config}
    return sum(rates[b.sensor_id] for b in frame.blocks)


def frame_channels(frame: SensorFrame) -> dict[str, float]:
    """Named channel values decoded from every fresh non-PEB block."""
    out: dict[str, float] = {}
    for block in frame.blocks:
        if block.sensor_id == PEB_SENSOR_ID or block.stale:
            continue
        names = CHANNELS.get(block.sensor_id)
        if not names:
            continue
        values = decode_values(block)
        for name, value in zip(names, values):
            out[name] = value
    return out


def frame_gps_fix(frame: SensorFrame) -> Optional[tuple[float, float, float, int]]:
    """(lat, lon, hdop, satellites) from a fresh GPS block, else None."""
    for block in frame.blocks:
        if block.sensor_id == "gps" and not block.stale:
            values = decode_values(block)
            if len(values) == 4:
                lat, lon, hdop, sats = values
                return lat, lon, hdop, int(sats)
    return None
