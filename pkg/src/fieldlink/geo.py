"""Great-circle distance and GPS fix handling.

Distances use the haversine formula on a 6371 km sphere. Fix quality is
gated on horizontal dilution of precision below 1.5 and at least 7 visible
satellites; reference positions average only gated-in fixes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

EARTH_RADIUS_M = 6_371_000.0
HDOP_GATE = 1.5
MIN_SATELLITES = 7
REFERENCE_WINDOW_MS = 120_000


class NoReferenceError(ValueError):
    """No usable fix inside the averaging window."""


def haversine(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters between two lat/lon points."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


@dataclass(frozen=True)
class GpsFix:
    lat: float
    lon: float
    hdop: float
    satellites: int
    time_ms: int = 0

    @property
    def usable(self) -> bool:
        return self.hdop < HDOP_GATE and self.satellites >= MIN_SATELLITES


def reference_position(fixes: Sequence[GpsFix], window_ms: int = REFERENCE_WINDOW_MS) -> tuple[float, float]:
    """Mean lat/lon over the usable fixes of a motionless dwell.

    Only fixes within window_ms of the first fix are considered; fixes
    failing the HDOP or satellite gate are excluded from the mean.
    """
    if not fixes:
        raise NoReferenceError("no fixes supplied")
    t0 = min(f.time_ms for f in fixes)
    windowed = [f for f in fixes if f.time_ms - t0 <= window_ms]
    usable = [f for f in windowed if f.usable]
    if not usable:
        raise NoReferenceError("no usable fix in the averaging window")
    return (
        sum(f.lat for f in usable) / len(usable),
        sum(f.lon for f in usable) / len(usable),
    )


class TangentPlane:
    """Local flat x/y frame (meters east/north) around an origin lat/lon.

    Good to well under a meter over the few kilometers the scenarios span;
    lets mobility traces be written in meters while the frames still carry
    realistic coordinates.
    """

    def __init__(self, origin_lat: float, origin_lon: float):
        self.origin_lat = origin_lat
        self.origin_lon = origin_lon
        self._coslat = math.cos(math.radians(origin_lat))

    def to_latlon(self, x_m: float, y_m: float) -> tuple[float, float]:
        lat = self.origin_lat + math.degrees(y_m / EARTH_RADIUS_M)
        lon = self.origin_lon + math.degrees(x_m / (EARTH_RADIUS_M * self._coslat))
        return lat, lon

    def to_xy(self, lat: float, lon: float) -> tuple[float, float]:
        y = math.radians(lat - self.origin_lat) * EARTH_RADIUS_M
        x = math.radians(lon - self.origin_lon) * EARTH_RADIUS_M * self._coslat
        return x, y
