"""Seeded stochastic radio-link model for the off-body hops.

The channel is probabilistic per message, not physics-based: delivery
probability is flat out to a knee distance, falls linearly to zero at a
cutoff, and is scaled down when the wearer's textile antenna faces away
from the receiving station. A two-state GOOD/BAD chain layers bursty
outages on top, and each delivered message can independently be corrupted
so the receiver's parity path gets exercised. Everything draws from one
seeded generator per link, so a scenario replays bit-identically.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence


class Orientation(str, Enum):
    FACING_RM = "facing_rm"
    BACK_TO_RM = "back_to_rm"


class OutageState(str, Enum):
    GOOD = "good"
    BAD = "bad"


@dataclass(frozen=True)
class AntennaProfile:
    kind: str
    gain_db: float
    beam_h_deg: float
    beam_v_deg: float


# Canonical profiles. The two tripod antennas carry their rated figures;
# the textile and stock omni values are nominal stand-ins.
ANTENNAS: dict[str, AntennaProfile] = {
    "textile_front": AntennaProfile("textile_front", 5.0, 80.0, 80.0),
    "textile_back": AntennaProfile("textile_back", 5.0, 80.0, 80.0),
    "omni": AntennaProfile("omni", 2.0, 360.0, 30.0),
    "directional_30x30": AntennaProfile("directional_30x30", 15.0, 30.0, 30.0),
    "directional_90x15": AntennaProfile("directional_90x15", 15.0, 90.0, 15.0),
}


@dataclass(frozen=True)
class LinkCalibration:
    """Delivery-probability shape. Defaults are calibration, not ground truth."""

    p_near: float = 0.995
    knee_m: float = 900.0
    cutoff_m: float = 1200.0
    back_penalty: float = 0.6

    def __post_init__(self):
        if not 0 < self.p_near <= 1:
            raise ValueError("p_near must be in (0, 1]")
        if not 0 < self.knee_m < self.cutoff_m:
            raise ValueError("need 0 < knee_m < cutoff_m")
        if not 0 < self.back_penalty <= 1:
            raise ValueError("back_penalty must be in (0, 1]")


@dataclass
class OutageChain:
    """Two-state chain; transition probabilities are per step() call."""

    p_good_to_bad: float = 0.0
    p_bad_to_good: float = 0.0
    state: OutageState = OutageState.GOOD

    @classmethod
    def from_dwell_means(cls, mean_good_s: float, mean_bad_s: float, tick_ms: int) -> "OutageChain":
        """Chain whose expected dwell in each state matches the given means.

        Dwell in a state is geometric in ticks with mean 1/p, so
        p = tick / mean_dwell.
        """
        tick_s = tick_ms / 1000.0
        return cls(
            p_good_to_bad=min(1.0, tick_s / mean_good_s) if mean_good_s > 0 else 0.0,
            p_bad_to_good=min(1.0, tick_s / mean_bad_s) if mean_bad_s > 0 else 0.0,
        )

    def step(self, rng: random.Random) -> OutageState:
        if self.state == OutageState.GOOD:
            if self.p_good_to_bad and rng.random() < self.p_good_to_bad:
                self.state = OutageState.BAD
        else:
            if self.p_bad_to_good and rng.random() < self.p_bad_to_good:
                self.state = OutageState.GOOD
        return self.state


@dataclass(frozen=True)
class Position:
    lat: float
    lon: float
    orientation: Orientation = Orientation.FACING_RM

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError("lat outside [-90, 90]")
        if not -180.0 < self.lon <= 180.0:
            raise ValueError("lon outside (-180, 180]")


@dataclass(frozen=True)
class TransmitOutcome:
    delivered: bool
    deliver_at: int = 0
    corrupted: bool = False


def delivery_probability(cal: LinkCalibration, distance_m: float, orientation: Orientation, textile: bool) -> float:
    """Piecewise delivery probability; non-increasing in distance."""
    if distance_m < 0:
        raise ValueError("distance must be >= 0")
    if distance_m >= cal.cutoff_m:
        return 0.0
    if distance_m <= cal.knee_m:
        p = cal.p_near
    else:
        p = cal.p_near * (cal.cutoff_m - distance_m) / (cal.cutoff_m - cal.knee_m)
    if textile and orientation == Orientation.BACK_TO_RM:
        p *= cal.back_penalty
    return p


class LinkModel:
    """One radio hop with live geometry, outage state and seeded randomness."""

    def __init__(
        self,
        name: str,
        antenna_a: AntennaProfile,
        antenna_b: AntennaProfile,
        cal: LinkCalibration = LinkCalibration(),
        latency_ms: int = 20,
        corruption_prob: float = 0.0,
        chain: Optional[OutageChain] = None,
        outage_windows: Sequence[tuple[int, int]] = (),
        seed: int = 0,
    ):
        self.name = name
        self.antenna_a = antenna_a
        self.antenna_b = antenna_b
        self.cal = cal
        self.latency_ms = latency_ms
        self.corruption_prob = corruption_prob
        self.chain = chain or OutageChain()
        self.outage_windows = sorted(outage_windows)
        self.rng = random.Random(f"{seed}:{name}")
        self.distance_m = 0.0
        self.orientation = Orientation.FACING_RM

    @property
    def textile(self) -> bool:
        return self.antenna_a.kind.startswith("textile") or self.antenna_b.kind.startswith("textile")

    def update_geometry(self, distance_m: float, orientation: Orientation) -> None:
        self.distance_m = distance_m
        self.orientation = orientation

    def step_outage(self, _dt_ms: int) -> OutageState:
        return self.chain.step(self.rng)

    def outage_state(self, t: int) -> OutageState:
        for start, end in self.outage_windows:
            if start <= t < end:
                return OutageState.BAD
        return self.chain.state

    def delivery_probability(self) -> float:
        return delivery_probability(self.cal, self.distance_m, self.orientation, self.textile)

    def transmit(self, message, t: int) -> TransmitOutcome:
        """Roll one transmission at time t against the current link state."""
        if self.outage_state(t) == OutageState.BAD:
            return TransmitOutcome(False)
        if self.rng.random() >= self.delivery_probability():
            return TransmitOutcome(False)
        corrupted = bool(self.corruption_prob) and self.rng.random() < self.corruption_prob
        return TransmitOutcome(True, t + self.latency_ms, corrupted)


class RelayNode:
    """Transparent store-bridge: whatever arrives on the short hop is
    re-enqueued unchanged on the long hop, so path delay is the latency sum."""

    def __init__(self, long_link: LinkModel):
        self.long_link = long_link

    def forward(self, message, t: int) -> TransmitOutcome:
        return self.long_link.transmit(message, t)


class LinkPath:
    """One or two hops between an operator and the monitoring station."""

    def __init__(self, hops: Sequence[LinkModel]):
        if not hops:
            raise ValueError("a path needs at least one hop")
        self.hops = list(hops)

    @property
    def latency_ms(self) -> int:
        return sum(h.latency_ms for h in self.hops)

    def send(self, message, t: int) -> TransmitOutcome:
        """Carry a message across every hop; lost at any hop means lost."""
        at = t
        corrupted = False
        for hop in self.hops:
            outcome = hop.transmit(message, at)
            if not outcome.delivered:
                return TransmitOutcome(False)
            at = outcome.deliver_at
            corrupted = corrupted or outcome.corrupted
        return TransmitOutcome(True, at, corrupted)
