"""Signal timing: fixed-time service-rate schedules and max-pressure control.

A fixed-time movement is served at its saturation flow ``C`` during green
windows ``[nT + offset, nT + offset + green)`` and not at all otherwise. A
speedup factor divides the cycle while preserving every green ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

from .network import Intersection, MovementId, Network

# Relative tolerance used to snap evaluation times onto switch instants.
_SNAP = 1e-9


@dataclass(frozen=True)
class FixedTimePlan:
    cycle: float
    offset: float
    green: float
    speedup: float = 1.0

    def __post_init__(self):
        if not self.cycle > 0:
            raise ValueError("cycle must be positive")
        if not 0 < self.green <= self.cycle:
            raise ValueError("green must lie in (0, cycle]")
        if not self.speedup > 0:
            raise ValueError("speedup must be positive")

    @property
    def red(self) -> float:
        return self.cycle - self.green

    @property
    def period(self) -> float:
        """Wall-clock period after speedup."""
        return self.cycle / self.speedup

    def sped_up(self, factor: float) -> "FixedTimePlan":
        return FixedTimePlan(self.cycle, self.offset, self.green, self.speedup * factor)

    def _raw_state(self, t: float) -> tuple[bool, float]:
        u = self.speedup * t
        n = math.floor((u - self.offset) / self.cycle)
        start = n * self.cycle + self.offset
        if u - start < self.green:
            return True, (start + self.green) / self.speedup
        return False, (start + self.cycle) / self.speedup

    def state(self, t: float) -> tuple[bool, float]:
        """Green flag on ``[t, next)`` and the next switch time ``next > t``."""
        if self.green >= self.cycle:
            return True, math.inf
        green, nxt = self._raw_state(t)
        tol = _SNAP * self.period
        if nxt - t <= tol:
            green, nxt = self._raw_state(nxt + tol)
        return green, nxt


def service_rate(plan: FixedTimePlan, saturation_flow: float, t: float) -> float:
    """Service rate at time ``t``: the saturation flow during green, else 0."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return saturation_flow if plan.state(t)[0] else 0.0


def green_ratio(plan: FixedTimePlan) -> float:
    return plan.green / plan.cycle


@dataclass(frozen=True)
class MovementTiming:
    """Union of green windows on a common cycle; serves one movement."""

    windows: tuple[FixedTimePlan, ...]
    always: bool = False

    def state(self, t: float) -> tuple[bool, float]:
        if self.always:
            return True, math.inf
        green = False
        nxt = math.inf
        for w in self.windows:
            g, n = w.state(t)
            green = green or g
            nxt = min(nxt, n)
        return green, nxt

    def rate(self, saturation_flow: float, t: float) -> float:
        return saturation_flow if self.state(t)[0] else 0.0

    def sped_up(self, factor: float) -> "MovementTiming":
        return MovementTiming(tuple(w.sped_up(factor) for w in self.windows), self.always)


NEVER = MovementTiming(())
ALWAYS = MovementTiming((), always=True)


@dataclass(frozen=True)
class FixedTimeControl:
    """Fixed-time plan for one intersection: phases run in table order."""

    cycle: float
    greens: tuple[float, ...]
    offset: float = 0.0
    speedup: float = 1.0
    lost_time: float = 0.0

    def __post_init__(self):
        if any(g <= 0 for g in self.greens):
            raise ValueError("phase greens must be positive")
        if sum(self.greens) > self.cycle * (1 + 1e-12):
            raise ValueError("phase greens exceed the cycle")
        if any(g <= self.lost_time for g in self.greens):
            raise ValueError("lost time must be shorter than every green")
        if not 0 <= self.offset < self.cycle:
            raise ValueError("offset must lie in [0, cycle)")

    def slots(self) -> list[tuple[float, int]]:
        """Cycle-relative (start, phase) pairs; phase -1 means nothing served."""
        out = []
        t = 0.0
        for k, g in enumerate(self.greens):
            if self.lost_time > 0:
                out.append((t, -1))
                out.append((t + self.lost_time, k))
            else:
                out.append((t, k))
            t += g
        if t < self.cycle * (1 - 1e-12):
            out.append((t, -1))
        return out

    def slot_time(self, n: int, s: int) -> float:
        """Wall-clock start of slot ``s`` in cycle ``n``."""
        rel = self.slots()[s][0]
        return (n * self.cycle + self.offset + rel) / self.speedup

    def movement_timing(self, node: Intersection, mid: MovementId) -> MovementTiming:
        slots = self.slots()
        ends = [s for s, _ in slots[1:]] + [self.cycle]
        windows: list[list[float]] = []
        for (start, k), end in zip(slots, ends):
            if k >= 0 and mid in node.phases[k]:
                if windows and abs(windows[-1][1] - start) < 1e-12:
                    windows[-1][1] = end
                else:
                    windows.append([start, end])
        # wrap-around merge of the last and first window
        if len(windows) > 1 and windows[0][0] == 0.0 and abs(windows[-1][1] - self.cycle) < 1e-12:
            first = windows.pop(0)
            windows[-1][1] = self.cycle + first[1]
        plans = tuple(
            FixedTimePlan(self.cycle, (self.offset + a) % self.cycle, b - a, self.speedup)
            for a, b in windows
        )
        return MovementTiming(plans)

    def sped_up(self, factor: float) -> "FixedTimeControl":
        return FixedTimeControl(self.cycle, self.greens, self.offset, self.speedup * factor, self.lost_time)


@dataclass(frozen=True)
class MaxPressureConfig:
    cycle: float
    switches_per_cycle: int = 4
    lost_time: float = 0.0

    def __post_init__(self):
        if self.switches_per_cycle < 1 or not self.cycle > 0:
            raise ValueError("max pressure needs a positive cycle and >= 1 switch per cycle")

    @property
    def decision_interval(self) -> float:
        return self.cycle / self.switches_per_cycle


Control = Union[FixedTimeControl, MaxPressureConfig]


@dataclass(frozen=True)
class SignalPlan:
    """Per-intersection controls (all fixed-time, all max-pressure, or mixed)."""

    controls: Mapping[str, Control]

    def movement_timings(self, network: Network) -> dict[MovementId, MovementTiming]:
        """Fixed-time timings for every movement (fluid model input)."""
        out = {}
        nodes = {n.id: n for n in network.intersections}
        for m in network.movements:
            if m.always_served:
                out[m.id] = ALWAYS
                continue
            ctrl = self.controls.get(m.intersection_id)
            if ctrl is None:
                out[m.id] = ALWAYS
            elif isinstance(ctrl, FixedTimeControl):
                out[m.id] = ctrl.movement_timing(nodes[m.intersection_id], m.id)
            else:
                raise TypeError("fluid timings need fixed-time control at every intersection")
        return out

    def sped_up(self, factor: float) -> "SignalPlan":
        out = {}
        for k, c in self.controls.items():
            if isinstance(c, FixedTimeControl):
                out[k] = c.sped_up(factor)
            else:
                out[k] = MaxPressureConfig(c.cycle / factor, c.switches_per_cycle, c.lost_time)
        return SignalPlan(out)


class PressureTable:
    """Precomputed max-pressure weights for one intersection.

    ``decide`` takes queue lengths indexed like ``network.movements``.
    Always-served movements are skipped: their service does not depend on
    the chosen phase.
    """

    def __init__(self, network: Network, node: Intersection):
        if not node.phases:
            raise ValueError(f"intersection {node.id} has an empty phase table")
        idx = network.movement_index
        R = network.routing
        succ: dict[MovementId, list[tuple[int, float]]] = {}
        for (src, dst), p in R.items():
            if p > 0:
                succ.setdefault(src, []).append((idx[dst], p))
        self.phases = []
        for phase in node.phases:
            terms = []
            for mid in phase:
                m = network.movements[idx[mid]]
                if m.always_served:
                    continue
                terms.append((m.saturation_flow, idx[mid], tuple(succ.get(mid, ()))))
            self.phases.append(terms)

    def pressures(self, x: Sequence[float]) -> list[float]:
        out = []
        for terms in self.phases:
            total = 0.0
            for sat, j, down in terms:
                w = x[j]
                for i, p in down:
                    w -= p * x[i]
                total += sat * w
            out.append(total)
        return out

    def decide(self, x: Sequence[float]) -> int:
        best, best_p = 0, None
        for k, p in enumerate(self.pressures(x)):
            if best_p is None or p > best_p:
                best, best_p = k, p
        return best


def max_pressure_decide(
    queues: Mapping[MovementId, float],
    node: Intersection,
    network: Network,
) -> int:
    """Index of the phase with maximal saturation-weighted pressure.

    Weight of movement ``j`` is ``x_j - sum_i r(j, i) x_i``; phase pressure
    sums ``saturation_flow * weight`` over its movements; ties go to the
    lowest index.
    """
    table = PressureTable(network, node)
    x = [queues.get(mid, 0.0) for mid in network.movement_ids]
    return table.decide(x)


def first_slot(control: FixedTimeControl, t0: float = 0.0) -> tuple[int, int]:
    """(cycle, slot) active at ``t0``."""
    n = math.floor(((control.speedup * t0) - control.offset) / control.cycle)
    slots = control.slots()
    s = 0
    for k in range(len(slots)):
        if control.slot_time(n, k) <= t0 + 1e-12:
            s = k
    return n, s


def slot_phase(control: FixedTimeControl, s: int) -> int:
    return control.slots()[s][1]


def next_slot(control: FixedTimeControl, n: int, s: int) -> tuple[int, int]:
    s += 1
    if s == len(control.slots()):
        return n + 1, 0
    return n, s

