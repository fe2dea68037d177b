"""Walk through the per-second data budget of the wearable equipment.

Shows the stock sensor table, builds one aggregated frame, corrupts it to
trip the parity check, and applies a query filter so only the GPS block
survives.
"""

from fieldlink.sensors import (
    DeviceState,
    QueryFilter,
    SensorReading,
    apply_query_filter,
    build_frame,
    check_parity,
    default_sensor_table,
    frame_payload_length,
    gps_reading,
    serialize_frame,
)

table = default_sensor_table()
print(f"{'sensor':<12}{'garment':<9}{'bus':<11}{'bytes/s':>8}  function")
for d in table:
    print(f"{d.sensor_id:<12}{d.garment.value:<9}{d.bus.value:<11}{d.rate_bytes_per_s:>8}  {d.function}")
print(f"{'':<32}{sum(d.rate_bytes_per_s for d in table):>8}  total per second\n")

readings = [
    SensorReading("piezo", (16.0,)),
    SensorReading("vitals", (82.0, 17.0, 37.1)),
    SensorReading("spo2", (97.0,)),
    SensorReading("co", (3.5,)),
    SensorReading("ext_temp", (28.0,)),
    gps_reading(45.1912, 9.1582, 0.9, 9),
]
device = DeviceState("op-1", battery_fraction=0.87, status_code=1, peb_timestamp=42_000)
frame = build_frame(readings, device, table)

data = serialize_frame(frame, table)
stale = [b.sensor_id for b in frame.blocks if b.stale]
print(f"one frame: {frame_payload_length(frame, table)} payload bytes + 1 parity byte = {len(data)} on the wire")
print(f"sensors without a reading this second (zero-filled, stale): {stale}")
print(f"parity check on the untouched frame: {check_parity(data)}")

tampered = bytearray(data)
tampered[100] ^= 0x04
print(f"parity check after flipping one bit:  {check_parity(bytes(tampered))}")

gps_only = apply_query_filter(frame, QueryFilter.of({"gps"}), table)
print(f"\nafter a {{gps}} query filter: blocks = {[b.sensor_id for b in gps_only.blocks]}, "
      f"{frame_payload_length(gps_only, table)} payload bytes (62 GPS + 84 status)")
