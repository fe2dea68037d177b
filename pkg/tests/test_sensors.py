import pytest
from hypothesis import given, settings, strategies as st

from fieldlink import sensors
from fieldlink.sensors import (
    Block,
    Bus,
    ConfigError,
    DeviceState,
    FrameError,
    Garment,
    QueryFilter,
    SensorDescriptor,
    SensorReading,
    apply_query_filter,
    build_frame,
    check_parity,
    default_sensor_table,
    deserialize_frame,
    frame_payload_length,
    gps_reading,
    serialize_frame,
)

FULL = default_sensor_table()
DEVICE = DeviceState("op-1", 0.93, 1, 120_000)


def full_readings():
    named = {
        "piezo": (16.0,),
        "vitals": (78.0, 15.5, 36.8),
        "spo2": (98.0,),
        "accel1": (0.4,),
        "accel2": (0.0,),
        "co": (2.5,),
        "ext_temp": (24.0,),
        "heat_flux": (55.0,),
        "motion": (0.3,),
        "gps": (45.19, 9.15, 0.9, 9.0),
        "co2": (600.0,),
    }
    return [SensorReading(sid, vals) for sid, vals in named.items()]


class TestSensorTable:
    def test_twelve_rows(self):
        assert len(FULL) == 12

    def test_gps_rate(self):
        rates = {d.sensor_id: d.rate_bytes_per_s for d in FULL}
        assert rates["gps"] == 62

    def test_total_rate_is_410(self):
        assert sum(d.rate_bytes_per_s for d in FULL) == 410

    def test_peb_block_rate(self):
        rates = {d.sensor_id: d.rate_bytes_per_s for d in FULL}
        assert rates["peb"] == 84

    def test_row_rates_match_prototype(self):
        rates = [d.rate_bytes_per_s for d in FULL]
        assert rates == [24, 68, 24, 24, 24, 24, 16, 16, 24, 62, 20, 84]

    def test_unique_ids_enforced(self):
        dup = FULL + [FULL[0]]
        with pytest.raises(ConfigError):
            sensors.validate_config(dup)

    def test_rate_must_be_positive(self):
        with pytest.raises(ConfigError):
            SensorDescriptor("x", Garment.OG, "", Bus.RS485, 0)

    def test_packaged_fixture_matches_default(self):
        loaded = sensors.load_sensor_table(sensors.packaged_sensor_table_path())
        assert loaded == FULL


class TestBuildFrame:
    def test_full_frame_is_410_payload_plus_parity(self):
        frame = build_frame(full_readings(), DEVICE, FULL)
        assert frame_payload_length(frame, FULL) == 410
        assert len(serialize_frame(frame, FULL)) == 411

    def test_peb_only_config(self):
        config = [d for d in FULL if d.sensor_id == "peb"]
        frame = build_frame([], DEVICE, config)
        assert frame_payload_length(frame, config) == 84
        assert len(serialize_frame(frame, config)) == 85

    def test_all_zero_bytes_gives_zero_parity(self):
        config = [d for d in FULL if d.sensor_id == "peb"]
        zero_device = DeviceState("", 0.0, 0, 0)
        frame = build_frame([], zero_device, config)
        data = serialize_frame(frame, config)
        assert set(data[:-1]) == {0}
        assert frame.parity == 0

    def test_missing_reading_is_zero_filled_and_stale(self):
        frame = build_frame([r for r in full_readings() if r.sensor_id != "co"], DEVICE, FULL)
        block = next(b for b in frame.blocks if b.sensor_id == "co")
        assert block.stale
        assert set(block.payload) == {0}
        assert frame_payload_length(frame, FULL) == 410  # length unchanged

    def test_unconfigured_reading_rejected(self):
        with pytest.raises(ConfigError):
            build_frame([SensorReading("bogus", (1.0,))], DEVICE, FULL)

    def test_duplicate_reading_rejected(self):
        with pytest.raises(ConfigError):
            build_frame([SensorReading("co", (1.0,)), SensorReading("co", (2.0,))], DEVICE, FULL)

    def test_gps_reading_must_carry_fix_quality(self):
        with pytest.raises(ConfigError):
            build_frame([SensorReading("gps", (45.0, 9.0))], DEVICE, FULL)
        fix = gps_reading(45.0, 9.0, 1.1, 8)
        frame = build_frame([fix], DEVICE, FULL)
        assert sensors.frame_gps_fix(frame) == (45.0, 9.0, 1.1, 8)

    def test_channels_decode(self):
        frame = build_frame(full_readings(), DEVICE, FULL)
        chans = sensors.frame_channels(frame)
        assert chans["heart_rate"] == 78.0
        assert chans["co_ppm"] == 2.5
        assert "lat" in chans


class TestParity:
    def test_untampered_frame_passes(self):
        data = serialize_frame(build_frame(full_readings(), DEVICE, FULL), FULL)
        assert check_parity(data)

    def test_every_single_bit_flip_detected_small_frame(self):
        # exhaustive oracle on a compact config (20-byte class of frames)
        config = [
            SensorDescriptor("a", Garment.OG, "", Bus.RS485, 8),
            SensorDescriptor("peb", Garment.PEB, "", Bus.INTERNAL, 84),
        ]
        frame = build_frame([SensorReading("a", ())], DeviceState("x", 0.5, 3, 42), config)
        data = serialize_frame(frame, config)
        for byte_idx in range(len(data)):
            for bit in range(8):
                tampered = bytearray(data)
                tampered[byte_idx] ^= 1 << bit
                assert not check_parity(bytes(tampered)), (byte_idx, bit)

    def test_same_bit_double_flip_is_the_documented_miss(self):
        # even-weight errors in one bit column cancel in the XOR
        data = serialize_frame(build_frame(full_readings(), DEVICE, FULL), FULL)
        for bit in range(8):
            tampered = bytearray(data)
            tampered[3] ^= 1 << bit
            tampered[7] ^= 1 << bit
            assert check_parity(bytes(tampered)), bit

    def test_short_input_rejected(self):
        with pytest.raises(ValueError):
            check_parity(b"\x00")


class TestQueryFilter:
    def test_wildcard_is_identity(self):
        frame = build_frame(full_readings(), DEVICE, FULL)
        assert apply_query_filter(frame, QueryFilter.all(), FULL) == frame

    def test_gps_filter_keeps_gps_and_peb(self):
        frame = build_frame(full_readings(), DEVICE, FULL)
        reduced = apply_query_filter(frame, QueryFilter.of({"gps"}), FULL)
        assert [b.sensor_id for b in reduced.blocks] == ["gps", "peb"]
        assert frame_payload_length(reduced, FULL) == 62 + 84
        assert check_parity(serialize_frame(reduced, FULL))

    def test_empty_filter_is_peb_only(self):
        frame = build_frame(full_readings(), DEVICE, FULL)
        reduced = apply_query_filter(frame, QueryFilter.of(set()), FULL)
        assert [b.sensor_id for b in reduced.blocks] == ["peb"]
        assert frame_payload_length(reduced, FULL) == 84

    def test_unknown_sensor_in_filter_rejected(self):
        frame = build_frame(full_readings(), DEVICE, FULL)
        with pytest.raises(ConfigError):
            apply_query_filter(frame, QueryFilter.of({"nope"}), FULL)


readings_strategy = st.lists(
    st.sampled_from([d.sensor_id for d in FULL if d.sensor_id != "peb" and d.sensor_id != "gps"]),
    unique=True,
).map(
    lambda ids: [
        SensorReading(sid, tuple(float(i + 1) for i in range(len(sensors.CHANNELS[sid]))))
        for sid in ids
    ]
)


class TestRoundTrip:
    @settings(max_examples=60, deadline=None)
    @given(
        readings=readings_strategy,
        battery=st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
        ts=st.integers(min_value=0, max_value=86_400_000),
    )
    def test_serialize_deserialize_round_trip(self, readings, battery, ts):
        device = DeviceState("op-7", battery, 9, ts)
        frame = build_frame(readings, device, FULL)
        data = serialize_frame(frame, FULL)
        assert check_parity(data)
        assert deserialize_frame(data, FULL) == frame

    def test_filtered_frame_round_trip(self):
        frame = build_frame(full_readings(), DEVICE, FULL)
        reduced = apply_query_filter(frame, QueryFilter.of({"gps", "co"}), FULL)
        data = serialize_frame(reduced, FULL)
        assert deserialize_frame(data, FULL) == reduced

    def test_parity_failure_raises_on_deserialize(self):
        data = bytearray(serialize_frame(build_frame(full_readings(), DEVICE, FULL), FULL))
        data[10] ^= 0x40
        with pytest.raises(FrameError):
            deserialize_frame(bytes(data), FULL)
