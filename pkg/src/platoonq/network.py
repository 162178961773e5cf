"""Road-network data model shared by the fluid and discrete-event simulators.

A network is a set of directed links joined at signalized intersections.
Each turn movement ``(m, n)`` from incoming link ``m`` to outgoing link ``n``
is one vertical queue. Vehicles leaving movement ``j`` are routed to a
movement ``i`` that starts on ``j``'s outgoing link with probability
``r(j, i)``, or leave the network when that link is an exit.

All rates are vehicles/hour and all times are seconds.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Optional

import numpy as np

MovementId = tuple[str, str]

ROW_SUM_TOL = 1e-9


class TurnKind(str, Enum):
    THROUGH = "through"
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class Link:
    id: str
    travel_time: float = 0.0
    storage_capacity: Optional[int] = None
    is_entry: bool = False
    is_exit: bool = False


@dataclass(frozen=True)
class Movement:
    from_link: str
    to_link: str
    saturation_flow: float
    intersection_id: str
    turn_kind: TurnKind = TurnKind.THROUGH
    # right-turn-on-red: served at saturation flow whatever the phase
    always_served: bool = False

    @property
    def id(self) -> MovementId:
        return (self.from_link, self.to_link)

    @property
    def headway(self) -> float:
        """Discharge headway in seconds at saturation flow."""
        return 3600.0 / self.saturation_flow


@dataclass(frozen=True)
class Intersection:
    id: str
    phases: tuple[tuple[MovementId, ...], ...] = ()
    min_green: tuple[float, ...] = ()


@dataclass(frozen=True)
class DemandProfile:
    rates: Mapping[MovementId, float] = field(default_factory=dict)
    gain: float = 1.0

    def rate(self, movement: MovementId) -> float:
        """Effective exogenous rate (vph) into ``movement``."""
        return self.gain * self.rates.get(movement, 0.0)


@dataclass(frozen=True)
class Violation:
    entity: str
    rule: str

    def __str__(self) -> str:
        return f"{self.entity}: {self.rule}"


@dataclass(frozen=True)
class Network:
    links: tuple[Link, ...]
    movements: tuple[Movement, ...]
    routing: Mapping[tuple[MovementId, MovementId], float]
    demand: DemandProfile
    intersections: tuple[Intersection, ...] = ()

    # ---- lookups -------------------------------------------------------
    @property
    def link_map(self) -> dict[str, Link]:
        return {l.id: l for l in self.links}

    @property
    def movement_ids(self) -> list[MovementId]:
        return [m.id for m in self.movements]

    @property
    def movement_index(self) -> dict[MovementId, int]:
        return {m.id: k for k, m in enumerate(self.movements)}

    def movement(self, mid: MovementId) -> Movement:
        for m in self.movements:
            if m.id == mid:
                return m
        raise KeyError(mid)

    def intersection(self, iid: str) -> Intersection:
        for node in self.intersections:
            if node.id == iid:
                return node
        raise KeyError(iid)

    def travel_time(self, mid: MovementId) -> float:
        """Travel time from movement ``mid`` to any movement it feeds."""
        return self.link_map[mid[1]].travel_time

    def successors(self, mid: MovementId) -> list[tuple[MovementId, float]]:
        """Downstream movements of ``mid`` with positive routing probability."""
        return [
            (dst, p) for (src, dst), p in self.routing.items() if src == mid and p > 0
        ]

    def routing_matrix(self) -> np.ndarray:
        """Dense ``R[j, i] = r(j, i)`` in movement order."""
        idx = self.movement_index
        R = np.zeros((len(idx), len(idx)))
        for (src, dst), p in self.routing.items():
            if src in idx and dst in idx:
                R[idx[src], idx[dst]] = p
        return R

    def demand_vector(self) -> np.ndarray:
        return np.array([self.demand.rate(m.id) for m in self.movements])

    def saturation_vector(self) -> np.ndarray:
        return np.array([m.saturation_flow for m in self.movements])

    def movement_flows(self) -> np.ndarray:
        """Stationary movement arrival rates solving ``a = e + R^T a``."""
        R = self.routing_matrix()
        e = self.demand_vector()
        return np.linalg.solve(np.eye(len(e)) - R.T, e)


def validate(network: Network) -> list[Violation]:
    """Return one :class:`Violation` per broken invariant (empty if valid)."""
    out: list[Violation] = []
    links = network.link_map
    if len(links) != len(network.links):
        out.append(Violation("links", "duplicate link id"))

    for l in network.links:
        if l.travel_time < 0:
            out.append(Violation(f"link {l.id}", "negative travel time"))
        if l.storage_capacity is not None and l.storage_capacity < 1:
            out.append(Violation(f"link {l.id}", "storage capacity below 1"))

    seen: set[MovementId] = set()
    for m in network.movements:
        name = f"movement {m.id}"
        if m.id in seen:
            out.append(Violation(name, "duplicate movement"))
        seen.add(m.id)
        if not m.saturation_flow > 0:
            out.append(Violation(name, "non-positive saturation flow"))
        for lid in m.id:
            if lid not in links:
                out.append(Violation(name, f"dangling link {lid}"))

    out.extend(_routing_violations(network, seen))

    for mid, rate in network.demand.rates.items():
        name = f"demand {mid}"
        if mid not in seen:
            out.append(Violation(name, "demand on unknown movement"))
            continue
        if rate < 0:
            out.append(Violation(name, "negative demand"))
        link = links.get(mid[0])
        if rate > 0 and link is not None and not link.is_entry:
            out.append(Violation(name, "demand on non-entry link"))

    out.extend(_intersection_violations(network, seen))
    out.extend(_connectivity_violations(network))
    return out


def _routing_violations(network: Network, known: set[MovementId]) -> list[Violation]:
    out = []
    links = network.link_map
    row_sum: dict[MovementId, float] = {mid: 0.0 for mid in known}
    for (src, dst), p in network.routing.items():
        name = f"routing {src}->{dst}"
        if src not in known or dst not in known:
            out.append(Violation(name, "routing references unknown movement"))
            continue
        if not 0.0 <= p <= 1.0:
            out.append(Violation(name, "probability outside [0, 1]"))
        if p != 0 and src[1] != dst[0]:
            out.append(Violation(name, "routing between incompatible links"))
        row_sum[src] += p
    for mid in network.movement_ids:
        link = links.get(mid[1])
        if link is None:
            continue
        s = row_sum.get(mid, 0.0)
        if link.is_exit:
            if s > ROW_SUM_TOL:
                out.append(Violation(f"routing row {mid}", "exit movement routed onward"))
        elif s < 1.0 - ROW_SUM_TOL:
            out.append(Violation(f"routing row {mid}", "routing row underflow"))
        elif s > 1.0 + ROW_SUM_TOL:
            out.append(Violation(f"routing row {mid}", "routing row overflow"))
    return out


def _intersection_violations(network: Network, known: set[MovementId]) -> list[Violation]:
    out = []
    ids = [n.id for n in network.intersections]
    if len(set(ids)) != len(ids):
        out.append(Violation("intersections", "duplicate intersection id"))
    for node in network.intersections:
        name = f"intersection {node.id}"
        own = {m.id for m in network.movements if m.intersection_id == node.id}
        phase_sets = [frozenset(p) for p in node.phases]
        if len(set(phase_sets)) != len(phase_sets):
            out.append(Violation(name, "duplicate phase"))
        for k, phase in enumerate(node.phases):
            for mid in phase:
                if mid not in known:
                    out.append(Violation(name, f"phase {k} references unknown movement {mid}"))
                elif mid not in own:
                    out.append(Violation(name, f"phase {k} serves foreign movement {mid}"))
        if node.phases:
            served = set().union(*phase_sets)
            for mid in sorted(own - served):
                out.append(Violation(name, f"movement {mid} in no phase"))
        if node.min_green and len(node.min_green) != len(node.phases):
            out.append(Violation(name, "min_green length differs from phase count"))
    return out


def _connectivity_violations(network: Network) -> list[Violation]:
    """Every movement must be reachable from an entry and must reach an exit."""
    links = network.link_map
    by_start: dict[str, list[MovementId]] = {}
    for m in network.movements:
        by_start.setdefault(m.from_link, []).append(m.id)

    forward: dict[MovementId, list[MovementId]] = {mid: [] for mid in network.movement_ids}
    for (src, dst), p in network.routing.items():
        if p > 0 and src in forward and dst in forward:
            forward[src].append(dst)

    reached = _bfs(
        [mid for lid, l in links.items() if l.is_entry for mid in by_start.get(lid, [])],
        forward,
    )
    backward: dict[MovementId, list[MovementId]] = {mid: [] for mid in forward}
    for src, dsts in forward.items():
        for dst in dsts:
            backward[dst].append(src)
    exits = [mid for mid in forward if mid[1] in links and links[mid[1]].is_exit]
    draining = _bfs(exits, backward)

    out = []
    for mid in network.movement_ids:
        if mid not in reached:
            out.append(Violation(f"movement {mid}", "unreachable from entry links"))
        if mid not in draining:
            out.append(Violation(f"movement {mid}", "cannot reach an exit link"))
    return out


def _bfs(start: Iterable[MovementId], edges: Mapping[MovementId, list[MovementId]]) -> set:
    seen = set(start)
    todo = deque(seen)
    while todo:
        u = todo.popleft()
        for v in edges.get(u, ()):
            if v not in seen:
                seen.add(v)
                todo.append(v)
    return seen


def scale(network: Network, gain: float) -> Network:
    """Multiply every saturation flow and exogenous demand by ``gain``.

    Routing, travel times, storage capacities and signal timing are untouched.
    """
    if not gain > 0:
        raise ValueError(f"gain must be positive, got {gain}")
    movements = tuple(replace(m, saturation_flow=m.saturation_flow * gain) for m in network.movements)
    rates = {mid: r * gain for mid, r in network.demand.rates.items()}
    return replace(network, movements=movements, demand=replace(network.demand, rates=rates))


def scale_travel_times(network: Network, factor: float) -> Network:
    """Divide every link travel time by ``factor`` (cycle speedup companion)."""
    if not factor > 0:
        raise ValueError(f"speedup must be positive, got {factor}")
    links = tuple(replace(l, travel_time=l.travel_time / factor) for l in network.links)
    return replace(network, links=links)
