"""Point-queue discrete-event simulator for signalized networks.

Vehicles arrive exogenously as Poisson streams, wait in vertical queues and
discharge at the saturation-flow headway while their movement is served.
On departure a destination movement is drawn from the routing matrix (or
the vehicle exits); the vehicle reaches it after the link travel time.
Signals run fixed-time plans or max-pressure control.

Simultaneous events are processed in the order: max-pressure decision,
phase change, exogenous arrival, queue join, departure; then by entity and
vehicle id. A departure due exactly at the end of green therefore sees the
red signal.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional

import numpy as np

from .network import Network
from .signals import (
    FixedTimeControl,
    MaxPressureConfig,
    PressureTable,
    SignalPlan,
    first_slot,
    next_slot,
    slot_phase,
)

MP_DECISION, PHASE_CHANGE, ARRIVAL, JOIN, DEPART = range(5)
# log-only kinds
DROP, BLOCK = 5, 6
KIND_NAMES = {
    MP_DECISION: "mp_decision",
    PHASE_CHANGE: "phase_change",
    ARRIVAL: "arrival",
    JOIN: "join",
    DEPART: "depart",
    DROP: "drop",
    BLOCK: "block",
}
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}

EVENT_LOG_COLUMNS = ("time_s", "kind", "intersection", "from_link", "to_link", "vehicle_id", "phase")
VEHICLE_COLUMNS = ("vehicle_id", "hop_index", "movement", "join_s", "depart_s")

_STREAM_ARRIVAL, _STREAM_ROUTING, _STREAM_SERVICE = range(3)


class ConservationError(AssertionError):
    pass


@dataclass(frozen=True)
class RngConfig:
    """Master seed plus replication index; streams are derived per source."""

    seed: int
    replication: int = 0

    def __post_init__(self):
        for v in (self.seed, self.replication):
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"seeds must be non-negative integers, got {v!r}")

    def stream(self, kind: int, index: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.replication), kind, index))
        return np.random.default_rng(ss)


@dataclass
class VehicleRecord:
    vehicle_id: int
    entry_link: str
    hops: list = field(default_factory=list)  # [movement index, join, depart]
    exit_link: Optional[str] = None


@dataclass
class EventLog:
    """Every processed event in processing order, plus vehicle records.

    Entries are ``(time, kind, entity, vehicle, phase)`` where ``entity`` is
    a movement index for vehicle events and an intersection index for
    signal events.
    """

    network: Network
    duration: float
    events: list
    vehicles: dict
    dropped: int = 0
    census: dict = field(default_factory=dict)

    def rows(self) -> Iterator[tuple]:
        movs = self.network.movements
        nodes = [n.id for n in self.network.intersections]
        for t, kind, ent, veh, phase in self.events:
            if kind in (PHASE_CHANGE, MP_DECISION):
                yield (t, KIND_NAMES[kind], nodes[ent], "", "", "", phase)
            else:
                m = movs[ent]
                yield (t, KIND_NAMES[kind], m.intersection_id, m.from_link, m.to_link, veh, "")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EVENT_LOG_COLUMNS)
        for row in self.rows():
            w.writerow([repr(row[0]), *row[1:]])
        return buf.getvalue()

    def vehicles_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(VEHICLE_COLUMNS)
        ids = self.network.movement_ids
        for vid in sorted(self.vehicles):
            for k, (m, join, dep) in enumerate(self.vehicles[vid].hops):
                w.writerow([vid, k, f"{ids[m][0]}>{ids[m][1]}", repr(join), "" if dep is None else repr(dep)])
        return buf.getvalue()


class _ArrivalStream:
    """Poisson arrival times for one source, generated in batches."""

    def __init__(self, rng: np.random.Generator, rate_per_s: float, batch: int = 256):
        self.rng, self.rate, self.batch = rng, rate_per_s, batch
        self.t = 0.0
        self.buf: list = []
        self.pos = 0

    def next(self) -> float:
        if self.pos == len(self.buf):
            gaps = self.rng.standard_exponential(self.batch) / self.rate
            self.buf = (self.t + np.cumsum(gaps)).tolist()
            self.t = self.buf[-1]
            self.pos = 0
        v = self.buf[self.pos]
        self.pos += 1
        return v


class _Uniforms:
    def __init__(self, rng: np.random.Generator, batch: int = 512):
        self.rng, self.batch = rng, batch
        self.buf: list = []
        self.pos = 0

    def next(self) -> float:
        if self.pos == len(self.buf):
            self.buf = self.rng.random(self.batch).tolist()
            self.pos = 0
        v = self.buf[self.pos]
        self.pos += 1
        return v


class Simulator:
    """One replication of the point-queue network.

    ``service`` is ``"deterministic"`` (departures every ``3600/s`` seconds
    during green) or ``"exponential"`` (service times exponential with mean
    ``3600/s``; used to compare against Markovian queue formulas).
    ``capacities`` overrides per-link storage; capacity bounds every queue
    whose movement starts on that link.
    """

    def __init__(
        self,
        network: Network,
        signals: SignalPlan,
        duration: float,
        rng: RngConfig,
        service: str = "deterministic",
        use_capacity: bool = True,
        capacities: Optional[Mapping[str, Optional[int]]] = None,
        record: bool = True,
        check_invariants: bool = False,
    ):
        if not duration > 0:
            raise ValueError("duration must be positive")
        if service not in ("deterministic", "exponential"):
            raise ValueError(f"unknown service model {service!r}")
        if not isinstance(rng, RngConfig):
            raise TypeError("rng must be an RngConfig")
        self.network = network
        self.duration = float(duration)
        self.rng = rng
        self.exponential = service == "exponential"
        self.record = record
        self.check = check_invariants

        movs = network.movements
        idx = network.movement_index
        links = network.link_map
        J = len(movs)
        self.J = J
        self.headway = [m.headway for m in movs]
        self.travel = [links[m.to_link].travel_time for m in movs]
        cap = {lid: l.storage_capacity for lid, l in links.items()}
        if capacities:
            cap.update(capacities)
        self.K = [
            (cap.get(m.from_link) or math.inf) if use_capacity else math.inf for m in movs
        ]

        self.dest: list[list[int]] = [[] for _ in range(J)]
        self.cum: list[list[float]] = [[] for _ in range(J)]
        for (src, dst), p in sorted(network.routing.items(), key=lambda kv: (idx[kv[0][0]], idx[kv[0][1]])):
            if p > 0:
                j = idx[src]
                self.dest[j].append(idx[dst])
                self.cum[j].append((self.cum[j][-1] if self.cum[j] else 0.0) + p)

        self.queue: list[deque] = [deque() for _ in range(J)]
        self.waiting: list[deque] = [deque() for _ in range(J)]
        self.green = [m.always_served for m in movs]
        self.always = [m.always_served for m in movs]
        self.pending = [False] * J
        self.token = [0] * J
        self.next_free = [-math.inf] * J

        self.heap: list = []
        self.events: list = []
        self.vehicles: dict[int, VehicleRecord] = {}
        self._vid = 0
        self.n_generated = self.n_dropped = self.n_exited = 0
        self.n_transit = self.n_waiting = 0

        # streams
        self.arrivals: dict[int, _ArrivalStream] = {}
        for k, m in enumerate(movs):
            rate = network.demand.rate(m.id)
            if rate > 0:
                self.arrivals[k] = _ArrivalStream(rng.stream(_STREAM_ARRIVAL, k), rate / 3600.0)
        self.route_u = [_Uniforms(rng.stream(_STREAM_ROUTING, k)) for k in range(J)]
        self.service_rng = (
            [rng.stream(_STREAM_SERVICE, k) for k in range(J)] if self.exponential else None
        )

        # signals
        self.nodes = list(network.intersections)
        self.node_movements: list[list[int]] = []
        self.phase_sets: list[list[frozenset]] = []
        for node in self.nodes:
            self.node_movements.append([idx[m.id] for m in movs if m.intersection_id == node.id])
            self.phase_sets.append([frozenset(idx[mid] for mid in ph) for ph in node.phases])
        self.controls = []
        for n, node in enumerate(self.nodes):
            ctrl = signals.controls.get(node.id)
            if ctrl is not None and not node.phases:
                raise ValueError(f"intersection {node.id} has a control but no phases")
            self.controls.append(ctrl)
        self.current_phase = [-1] * len(self.nodes)
        self.pressure = [
            PressureTable(network, node) if isinstance(c, MaxPressureConfig) else None
            for node, c in zip(self.nodes, self.controls)
        ]
        # movements at uncontrolled intersections are always served
        controlled = {j for n, c in enumerate(self.controls) if c is not None for j in self.node_movements[n]}
        for j in range(J):
            if j not in controlled:
                self.green[j] = True
        self._seq = 0

    # ---- scheduling ----------------------------------------------------
    def _push(self, t: float, kind: int, ent: int, veh: int, data=None) -> None:
        # seq keeps heap comparisons away from the payload
        self._seq += 1
        heapq.heappush(self.heap, (t, kind, ent, veh, self._seq, data))

    def _log(self, t, kind, ent, veh=-1, phase=-1):
        if self.record:
            self.events.append((t, kind, ent, veh, phase))

    def schedule_join(self, t: float, movement: int, vehicle: Optional[int] = None) -> int:
        """Inject a vehicle that joins ``movement`` at ``t`` (testing hook)."""
        if vehicle is None:
            vehicle = self._new_vehicle(self.network.movements[movement].from_link)
            self.n_generated += 1
        self.n_transit += 1
        self._push(t, JOIN, movement, vehicle)
        return vehicle

    def _new_vehicle(self, entry_link: str) -> int:
        self._vid += 1
        if self.record:
            self.vehicles[self._vid] = VehicleRecord(self._vid, entry_link)
        return self._vid

    # ---- signal handling -----------------------------------------------
    def _set_phase(self, t: float, n: int, phase: int) -> None:
        self.current_phase[n] = phase
        self._log(t, PHASE_CHANGE, n, -1, phase)
        on = self.phase_sets[n][phase] if phase >= 0 else frozenset()
        for j in self.node_movements[n]:
            g = self.always[j] or j in on
            if g == self.green[j]:
                continue
            self.green[j] = g
            if g:
                self._try_start(j, t)
            elif self.pending[j]:
                self.pending[j] = False
                self.token[j] += 1

    def _start_signals(self) -> None:
        for n, ctrl in enumerate(self.controls):
            if isinstance(ctrl, FixedTimeControl):
                cn, s = first_slot(ctrl, 0.0)
                self._set_phase(0.0, n, slot_phase(ctrl, s))
                cn, s = next_slot(ctrl, cn, s)
                self._push(ctrl.slot_time(cn, s), PHASE_CHANGE, n, -1, (cn, s))
            elif isinstance(ctrl, MaxPressureConfig):
                self._push(0.0, MP_DECISION, n, -1, 0)

    def _on_phase_event(self, t: float, n: int, data) -> None:
        ctrl = self.controls[n]
        if isinstance(ctrl, FixedTimeControl):
            cn, s = data
            self._set_phase(t, n, slot_phase(ctrl, s))
            cn, s = next_slot(ctrl, cn, s)
            self._push(ctrl.slot_time(cn, s), PHASE_CHANGE, n, -1, (cn, s))
        else:
            # end of a max-pressure clearance interval
            self._set_phase(t, n, data)

    def _on_decision(self, t: float, n: int, k: int) -> None:
        ctrl = self.controls[n]
        x = [len(q) for q in self.queue]
        choice = self.pressure[n].decide(x)
        self._log(t, MP_DECISION, n, -1, choice)
        if choice != self.current_phase[n]:
            if ctrl.lost_time > 0 and self.current_phase[n] >= 0:
                self._set_phase(t, n, -1)
                self._push(t + ctrl.lost_time, PHASE_CHANGE, n, -1, choice)
            else:
                self._set_phase(t, n, choice)
        self._push((k + 1) * ctrl.decision_interval, MP_DECISION, n, -1, k + 1)

    # ---- vehicles ------------------------------------------------------
    def _try_start(self, j: int, t: float) -> None:
        if self.pending[j] or not self.green[j] or not self.queue[j]:
            return
        if self.exponential:
            td = t + self.service_rng[j].exponential(self.headway[j])
        else:
            td = max(t, self.next_free[j])
        self.pending[j] = True
        self._push(td, DEPART, j, -1, self.token[j])

    def _enter(self, t: float, j: int, vid: int, kind: int) -> None:
        self.queue[j].append(vid)
        self._log(t, kind, j, vid)
        if self.record:
            self.vehicles[vid].hops.append([j, t, None])
        self._try_start(j, t)

    def _on_arrival(self, t: float, j: int) -> None:
        self.n_generated += 1
        vid = self._new_vehicle(self.network.movements[j].from_link)
        if len(self.queue[j]) >= self.K[j]:
            self.n_dropped += 1
            self._log(t, DROP, j, vid)
        else:
            self._enter(t, j, vid, ARRIVAL)
        nxt = self.arrivals[j].next()
        if nxt <= self.duration:
            self._push(nxt, ARRIVAL, j, -1)

    def _on_join(self, t: float, j: int, vid: int) -> None:
        self.n_transit -= 1
        if self.waiting[j] or len(self.queue[j]) >= self.K[j]:
            self.waiting[j].append(vid)
            self.n_waiting += 1
            self._log(t, BLOCK, j, vid)
        else:
            self._enter(t, j, vid, JOIN)

    def _on_depart(self, t: float, j: int, token: int) -> None:
        if token != self.token[j]:
            return
        self.pending[j] = False
        if not self.green[j] or not self.queue[j]:
            return
        vid = self.queue[j].popleft()
        self._log(t, DEPART, j, vid)
        if self.record:
            self.vehicles[vid].hops[-1][2] = t
        self.next_free[j] = t + self.headway[j]
        dests = self.dest[j]
        if dests:
            u = self.route_u[j].next() * self.cum[j][-1]
            i = dests[min(bisect_right(self.cum[j], u), len(dests) - 1)]
            self.n_transit += 1
            self._push(t + self.travel[j], JOIN, i, vid)
        else:
            self.n_exited += 1
            if self.record:
                self.vehicles[vid].exit_link = self.network.movements[j].to_link
        if self.waiting[j] and len(self.queue[j]) < self.K[j]:
            self.n_waiting -= 1
            self._enter(t, j, self.waiting[j].popleft(), JOIN)
        self._try_start(j, t)

    def census(self) -> dict:
        return {
            "generated": self.n_generated,
            "exited": self.n_exited,
            "in_queue": sum(len(q) for q in self.queue),
            "in_transit": self.n_transit,
            "waiting": self.n_waiting,
            "dropped": self.n_dropped,
        }

    def _check_conservation(self) -> None:
        c = self.census()
        rhs = c["exited"] + c["in_queue"] + c["in_transit"] + c["waiting"] + c["dropped"]
        if c["generated"] != rhs:
            raise ConservationError(f"vehicle conservation broken: {c}")

    # ---- main loop -----------------------------------------------------
    def run(self) -> EventLog:
        self._start_signals()
        for j, stream in self.arrivals.items():
            t0 = stream.next()
            if t0 <= self.duration:
                self._push(t0, ARRIVAL, j, -1)
        heap = self.heap
        end = self.duration
        while heap and heap[0][0] <= end:
            t, kind, ent, veh, _, data = heapq.heappop(heap)
            if kind == DEPART:
                self._on_depart(t, ent, data)
            elif kind == JOIN:
                self._on_join(t, ent, veh)
            elif kind == ARRIVAL:
                self._on_arrival(t, ent)
            elif kind == PHASE_CHANGE:
                self._on_phase_event(t, ent, data)
            else:
                self._on_decision(t, ent, data)
            if self.check:
                self._check_conservation()
        self._check_conservation()
        return EventLog(
            network=self.network,
            duration=self.duration,
            events=self.events,
            vehicles=self.vehicles,
            dropped=self.n_dropped,
            census=self.census(),
        )


def simulate(
    network: Network,
    signals: SignalPlan,
    duration: float,
    rng: RngConfig,
    **options,
) -> EventLog:
    """Run one replication and return its event log."""
    return Simulator(network, signals, duration, rng, **options).run()
