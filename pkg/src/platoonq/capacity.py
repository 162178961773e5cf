"""Intersection capacity, platoon headway gain and saturation-flow estimates."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

HCM_BASE_RATE = 1900.0


class Vehicle(str, Enum):
    CONNECTED = "C"
    REGULAR = "R"


@dataclass(frozen=True)
class LaneGroupSpec:
    lanes: int
    base_rate: float
    factor: float = 1.0
    green_ratio: float = 1.0

    def __post_init__(self):
        if self.lanes < 1:
            raise ValueError("lane count must be >= 1")
        if not self.base_rate > 0:
            raise ValueError("base rate must be positive")
        if not 0 < self.factor <= 1.5:
            raise ValueError("adjustment factor must lie in (0, 1.5]")
        if not 0 < self.green_ratio <= 1:
            raise ValueError("green ratio must lie in (0, 1]")

    @property
    def saturation_flow(self) -> float:
        return self.lanes * self.base_rate * self.factor


def intersection_capacity(groups: Sequence[LaneGroupSpec]) -> float:
    """Sum of saturation flow times effective green ratio (vph)."""
    return sum(g.saturation_flow * g.green_ratio for g in groups)


@dataclass(frozen=True)
class HeadwaySpec:
    h_low: float
    h_high: float
    labels: tuple[Vehicle, ...]

    def __post_init__(self):
        if not 0 < self.h_low <= self.h_high:
            raise ValueError("need 0 < h_low <= h_high")

    @classmethod
    def from_string(cls, labels: str, h_low: float, h_high: float) -> "HeadwaySpec":
        """``labels`` like ``"CRCCR..."``; C connected, R regular."""
        return cls(h_low, h_high, tuple(Vehicle(c) for c in labels.upper()))


@dataclass(frozen=True)
class PlatoonGain:
    headways: tuple[float, ...]
    mean_headway: float
    gain: float


def platoon_gain(spec: HeadwaySpec) -> PlatoonGain:
    """Average headway and gain of a mixed queue discharging as platoons.

    A vehicle follows at the short headway only when it and its predecessor
    are both connected, since a platoon has to start with a connected
    vehicle. The gain is relative to the regular headway.
    """
    labels = spec.labels
    if len(labels) < 2:
        raise ValueError("need at least two vehicles to have a headway")
    heads = tuple(
        spec.h_low if (cur is Vehicle.CONNECTED and prev is Vehicle.CONNECTED) else spec.h_high
        for prev, cur in zip(labels, labels[1:])
    )
    mean = sum(heads) / len(heads)
    return PlatoonGain(heads, mean, spec.h_high / mean)


def headway_to_satflow(headway: float) -> float:
    if not headway > 0:
        raise ValueError("headway must be positive")
    return 3600.0 / headway


def spacing_to_satflow(spacing_ft: float, speed_fps: float) -> float:
    """Saturation flow for a space headway at a given speed (40 ft at 44 ft/s -> 3960)."""
    if not (spacing_ft > 0 and speed_fps > 0):
        raise ValueError("spacing and speed must be positive")
    return headway_to_satflow(spacing_ft / speed_fps)


@dataclass(frozen=True)
class DetectorTrace:
    entry_times: tuple[float, ...]
    speeds: tuple[float, ...] = ()

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.entry_times, self.entry_times[1:])):
            raise ValueError("entry times must be strictly increasing")


def empirical_satflow(trace: DetectorTrace, n: int) -> float:
    """``3600 n / t_n`` where ``t_n`` is the n-th entry time after green onset."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > len(trace.entry_times):
        raise ValueError(f"trace has {len(trace.entry_times)} vehicles, asked for {n}")
    return 3600.0 * n / trace.entry_times[n - 1]


def satflow_ratios(rate: float, observed: float, theoretical: float = HCM_BASE_RATE) -> dict[str, float]:
    """Ratio of a platoon rate to an observed and to a theoretical baseline."""
    return {"vs_observed": rate / observed, "vs_theoretical": rate / theoretical}
