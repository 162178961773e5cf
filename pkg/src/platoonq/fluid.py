"""Exact event-driven integration of the fluid queueing network.

Each movement ``i`` obeys ``dx_i/dt = a_i - b_i`` with arrivals

    a_i(t) = e_i + sum_j r(j, i) b_j(t - tau_j)

and departures ``b_i = c_i`` while ``x_i > 0``, ``b_i = min(a_i, c_i)`` while
``x_i = 0``. Service rates ``c_i`` come from fixed-time signal timings, so
all rates are piecewise constant and every queue is piecewise linear. The
integrator jumps from event to event: signal switches, a queue emptying or
filling, a blocked-inflow buffer emptying, and the arrival downstream of a
departure-rate change after its travel time.

When a finite-capacity queue is full its inflow is throttled to its
departure rate. The exogenous share of the excess is dropped; the share
coming from upstream movements waits in a boundary buffer and enters as
soon as the departure rate allows. Both are recorded.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Hashable, Optional, Sequence

import numpy as np

from .network import Network, scale as scale_network
from .signals import ALWAYS, MovementTiming, SignalPlan


class FluidIntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FluidSystem:
    """Fluid network in a consistent time unit (rates per unit, delays in units)."""

    ids: tuple[Hashable, ...]
    exogenous: np.ndarray
    saturation: np.ndarray
    timings: tuple[MovementTiming, ...]
    routing: np.ndarray
    delays: np.ndarray
    capacity: np.ndarray

    def __post_init__(self):
        J = len(self.ids)
        for name in ("exogenous", "saturation", "delays", "capacity"):
            if np.shape(getattr(self, name)) != (J,):
                raise ValueError(f"{name} must have one entry per movement")
        if np.shape(self.routing) != (J, J) or len(self.timings) != J:
            raise ValueError("routing must be J x J and timings must have J entries")
        if np.any(self.delays < 0):
            raise ValueError("negative travel time")

    @classmethod
    def from_network(cls, network: Network, plan: SignalPlan) -> "FluidSystem":
        """Build from a network in vph/seconds; the fluid time unit is seconds."""
        timing = plan.movement_timings(network)
        links = network.link_map
        cap = [
            links[m.from_link].storage_capacity or math.inf for m in network.movements
        ]
        return cls(
            ids=tuple(network.movement_ids),
            exogenous=network.demand_vector() / 3600.0,
            saturation=network.saturation_vector() / 3600.0,
            timings=tuple(timing[mid] for mid in network.movement_ids),
            routing=network.routing_matrix(),
            delays=np.array([network.travel_time(mid) for mid in network.movement_ids]),
            capacity=np.array(cap, dtype=float),
        )

    @classmethod
    def single_queue(
        cls,
        arrival: float,
        saturation: float,
        timing: MovementTiming = ALWAYS,
        capacity: float = math.inf,
    ) -> "FluidSystem":
        return cls(
            ids=("q",),
            exogenous=np.array([float(arrival)]),
            saturation=np.array([float(saturation)]),
            timings=(timing,),
            routing=np.zeros((1, 1)),
            delays=np.zeros(1),
            capacity=np.array([float(capacity)]),
        )

    def scaled(self, gain: float) -> "FluidSystem":
        """Arrival and saturation rates times ``gain``; capacities unchanged."""
        if not gain > 0:
            raise ValueError("gain must be positive")
        return replace(self, exogenous=self.exogenous * gain, saturation=self.saturation * gain)

    def sped_up(self, factor: float) -> "FluidSystem":
        """Service ``c(g t)``: cycles, offsets and travel times divided by ``factor``."""
        if not factor > 0:
            raise ValueError("speedup must be positive")
        return replace(
            self,
            timings=tuple(t.sped_up(factor) for t in self.timings),
            delays=self.delays / factor,
        )

    def with_capacity(self, capacity: Sequence[float]) -> "FluidSystem":
        return replace(self, capacity=np.asarray(capacity, dtype=float))


@dataclass
class FluidTrajectory:
    """Breakpoints of a piecewise-linear fluid solution.

    Row ``k`` of the state arrays holds values at ``times[k]``; row ``k`` of
    the rate arrays holds the constant rates on ``[times[k], times[k+1])``.
    """

    ids: tuple
    times: np.ndarray
    queue: np.ndarray
    buffer: np.ndarray
    arrivals: np.ndarray  # cumulative accepted inflow A_i
    departures: np.ndarray  # cumulative outflow B_i
    dropped: np.ndarray  # cumulative exogenous inflow refused at full queues
    held: np.ndarray  # cumulative upstream inflow parked in boundary buffers
    departure_rate: np.ndarray
    service_rate: np.ndarray
    offered_rate: np.ndarray
    delayed_rate: np.ndarray  # upstream departure rate arriving now, per source
    delays: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def index(self, movement) -> int:
        return self.ids.index(movement) if not isinstance(movement, (int, np.integer)) else int(movement)

    def value(self, movement, t) -> np.ndarray:
        i = self.index(movement)
        return np.interp(t, self.times, self.queue[:, i])

    def cumulative(self, arr: np.ndarray, movement, t: float) -> float:
        return float(np.interp(t, self.times, arr[:, self.index(movement)]))

    def breakpoints(self, movement) -> list[tuple[float, float]]:
        i = self.index(movement)
        return list(zip(self.times.tolist(), self.queue[:, i].tolist()))

    @property
    def horizon(self) -> float:
        return float(self.times[-1])


def integrate(
    system: FluidSystem,
    x0: Sequence[float],
    horizon: float,
    max_events: int = 2_000_000,
) -> FluidTrajectory:
    """Integrate the fluid network on ``[0, horizon]`` exactly."""
    x = np.array(x0, dtype=float)
    J = len(system.ids)
    if x.shape != (J,):
        raise ValueError("x0 must have one entry per movement")
    if np.any(x < 0):
        raise ValueError("initial queues must be non-negative")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    K = system.capacity
    if np.any(x > K):
        raise ValueError("initial queue above capacity")

    e = system.exogenous
    R = system.routing
    tau = system.delays
    sat = system.saturation
    zero_delay = tau == 0

    buf = np.zeros(J)
    cum = {k: np.zeros(J) for k in ("A", "B", "D", "H")}
    delayed = np.zeros(J)
    last_pushed = np.zeros(J)
    heap: list = []
    seq = itertools.count()

    times = [0.0]
    rec = {k: [] for k in ("x", "buf", "A", "B", "D", "H", "b", "c", "a", "dl")}

    def snapshot():
        rec["x"].append(x.copy())
        rec["buf"].append(buf.copy())
        for k in ("A", "B", "D", "H"):
            rec[k].append(cum[k].copy())

    snapshot()
    t = 0.0
    stalls = 0
    for n_events in itertools.count():
        if n_events > max_events:
            raise FluidIntegrationError(
                f"event limit {max_events} reached at t={t} of {horizon}; "
                f"queues={x.tolist()}"
            )
        states = [tm.state(t) for tm in system.timings]
        c = np.array([sat[i] if states[i][0] else 0.0 for i in range(J)])
        next_switch = min(s[1] for s in states)

        for _ in range(4 * J + 4):
            while heap and heap[0][0] <= t:
                _, _, j, rate = heapq.heappop(heap)
                delayed[j] = rate
            internal = R.T @ delayed
            a = e + internal
            b = np.where(x > 0, c, np.minimum(a, c))
            changed = np.flatnonzero(b != last_pushed)
            for j in changed:
                heapq.heappush(heap, (t + tau[j], next(seq), j, b[j]))
                last_pushed[j] = b[j]
            if not np.any(zero_delay[changed]):
                break
        else:
            raise FluidIntegrationError(f"zero-delay routing loop does not settle at t={t}")

        accepted, drop_rate, hold_rate, release = _boundary_rates(x, K, buf, a, e, internal, b)
        dx = accepted - b
        dbuf = hold_rate - release

        rec["b"].append(b.copy())
        rec["c"].append(c)
        rec["a"].append(a.copy())
        rec["dl"].append(delayed.copy())

        if t >= horizon:
            break

        cand = [horizon, next_switch]
        if heap:
            cand.append(heap[0][0])
        with np.errstate(divide="ignore", invalid="ignore"):
            hit0 = np.where((x > 0) & (dx < 0), t + x / -dx, math.inf)
            hitK = np.where((x < K) & (dx > 0), t + (K - x) / dx, math.inf)
            hitB = np.where((buf > 0) & (dbuf < 0), t + buf / -dbuf, math.inf)
        cand.extend([hit0.min(), hitK.min(), hitB.min()])
        t_next = min(cand)
        if t_next <= t:
            stalls += 1
            if stalls > 10 * J + 10:
                raise FluidIntegrationError(f"integrator stalled at t={t}")
            t_next = t
        else:
            stalls = 0
        dt = t_next - t

        x_new = x + dx * dt
        buf_new = buf + dbuf * dt
        x_new[hit0 <= t_next] = 0.0
        hit_cap = hitK <= t_next
        x_new[hit_cap] = K[hit_cap]
        buf_new[hitB <= t_next] = 0.0
        tol = 1e-12 * (1.0 + np.abs(x) + np.abs(dx) * dt)
        small = np.abs(x_new) <= tol
        x_new[small] = 0.0
        near_cap = np.isfinite(K) & (np.abs(x_new - K) <= tol)
        x_new[near_cap] = K[near_cap]
        buf_new[np.abs(buf_new) <= 1e-12 * (1.0 + np.abs(buf) + np.abs(dbuf) * dt)] = 0.0
        if np.any(x_new < 0) or np.any(buf_new < 0) or np.any(x_new > K):
            raise FluidIntegrationError(
                f"queue left [0, K] at t={t_next}: x={x_new.tolist()} buf={buf_new.tolist()}"
            )
        x, buf = x_new, buf_new
        if dt == 0:
            # empty segment: drop its rates and overwrite the state at t
            for k in ("b", "c", "a", "dl"):
                rec[k].pop()
            for k in ("x", "buf", "A", "B", "D", "H"):
                rec[k].pop()
            snapshot()
            continue
        cum["A"] += accepted * dt
        cum["B"] += b * dt
        cum["D"] += drop_rate * dt
        cum["H"] += hold_rate * dt
        t = t_next
        times.append(t)
        snapshot()

    # the final instant carries no segment
    for k in ("b", "c", "a", "dl"):
        rec[k].pop()
    return FluidTrajectory(
        ids=tuple(system.ids),
        times=np.array(times),
        queue=np.array(rec["x"]),
        buffer=np.array(rec["buf"]),
        arrivals=np.array(rec["A"]),
        departures=np.array(rec["B"]),
        dropped=np.array(rec["D"]),
        held=np.array(rec["H"]),
        departure_rate=np.array(rec["b"]).reshape(-1, J),
        service_rate=np.array(rec["c"]).reshape(-1, J),
        offered_rate=np.array(rec["a"]).reshape(-1, J),
        delayed_rate=np.array(rec["dl"]).reshape(-1, J),
        delays=tau.copy(),
    )


def _boundary_rates(x, K, buf, a, e, internal, b):
    """Accepted inflow, drop rate, buffer inflow and buffer release per queue."""
    full = x >= K
    accepted = a.copy()
    drop = np.zeros_like(a)
    hold = np.zeros_like(a)
    release = np.zeros_like(a)
    for i in np.flatnonzero(full):
        excess = a[i] - b[i]
        if excess >= 0:
            accepted[i] = b[i]
            if a[i] > 0:
                drop[i] = e[i] * excess / a[i]
                hold[i] = internal[i] * excess / a[i]
        elif buf[i] > 0:
            accepted[i] = b[i]
            release[i] = -excess
    return accepted, drop, hold, release


def average_queue(traj: FluidTrajectory, movement, t0: float, T: float) -> float:
    """Exact ``(1/T) * integral of x_i over [t0, t0 + T]``."""
    t1 = t0 + T
    if not T > 0:
        raise ValueError("window length must be positive")
    if t0 < traj.times[0] - 1e-12 or t1 > traj.times[-1] * (1 + 1e-12):
        raise ValueError(f"window [{t0}, {t1}] outside trajectory [0, {traj.horizon}]")
    i = traj.index(movement)
    ts = traj.times
    inner = (ts > t0) & (ts < t1)
    grid = np.concatenate([[t0], ts[inner], [t1]])
    vals = np.interp(grid, ts, traj.queue[:, i])
    return float(np.sum((vals[1:] + vals[:-1]) * np.diff(grid)) / 2.0 / T)


def total_average_queue(traj: FluidTrajectory, t0: float, T: float) -> float:
    return sum(average_queue(traj, i, t0, T) for i in range(len(traj.ids)))


def throughput(traj: FluidTrajectory, movement, t0: float, t1: float) -> float:
    """Mean departure rate of ``movement`` over ``[t0, t1]``."""
    B = traj.departures
    return (traj.cumulative(B, movement, t1) - traj.cumulative(B, movement, t0)) / (t1 - t0)


def _deviation(times, ref: FluidTrajectory, ref_factor, other: FluidTrajectory, other_time_factor):
    """max |other(t * f) - ref(t) * k| / (1 + ref(t) * k) over ``times``."""
    worst = 0.0
    for i in range(len(ref.ids)):
        r = np.interp(times, ref.times, ref.queue[:, i]) * ref_factor
        o = np.interp(times * other_time_factor, other.times, other.queue[:, i])
        worst = max(worst, float(np.max(np.abs(o - r) / (1.0 + np.abs(r)))))
    return worst


def check_homogeneity(
    system: FluidSystem, x0: Sequence[float], gain: float, horizon: float
) -> float:
    """Max relative gap between the ``gain``-scaled solution and ``gain`` times the base."""
    x0 = np.asarray(x0, dtype=float)
    base = integrate(system, x0, horizon)
    big = integrate(system.scaled(gain), gain * x0, horizon)
    ts = np.union1d(base.times, big.times)
    return _deviation(ts, base, gain, big, 1.0)


def check_speedup(
    system: FluidSystem, x0: Sequence[float], factor: float, horizon: float
) -> float:
    """Max relative gap between ``z(t)`` and ``x(g t) / g`` at matched breakpoints."""
    x0 = np.asarray(x0, dtype=float)
    base = integrate(system, x0, horizon)
    fast = integrate(system.sped_up(factor), x0 / factor, horizon / factor)
    # compare on base breakpoints t (z at t/g) and on fast breakpoints s (x at g s)
    d1 = _deviation(base.times, base, 1.0 / factor, fast, 1.0 / factor)
    ts = np.clip(fast.times * factor, 0.0, base.horizon)
    d2 = _deviation(ts, base, 1.0 / factor, fast, 1.0 / factor)
    return max(d1, d2)


def network_homogeneity(network: Network, plan: SignalPlan, gain: float, horizon: float,
                        x0: Optional[Sequence[float]] = None) -> float:
    """Homogeneity deviation with scaling applied at the network level."""
    base = FluidSystem.from_network(network, plan)
    big = FluidSystem.from_network(scale_network(network, gain), plan)
    x0 = np.zeros(len(base.ids)) if x0 is None else np.asarray(x0, dtype=float)
    tb = integrate(base, x0, horizon)
    tg = integrate(big, gain * x0, horizon)
    return _deviation(np.union1d(tb.times, tg.times), tb, gain, tg, 1.0)
