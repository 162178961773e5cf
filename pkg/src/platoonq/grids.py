"""Synthetic grid networks and signal plans for experiments and checks.

A ``cols x rows`` grid has one four-legged intersection per cell. Every
approach carries through, left and right movements; approaches on the grid
boundary are entry links and departures leaving the grid use exit links.
Right turns may turn on red. With split phasing each approach gets its own
phase (south, north, west, east); with protected phasing the four phases
are north-south through, north-south left, east-west through, east-west left.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .network import DemandProfile, Intersection, Link, Movement, Network, TurnKind
from .signals import FixedTimeControl, MaxPressureConfig, SignalPlan

HEADINGS = {"E": (1, 0), "N": (0, 1), "W": (-1, 0), "S": (0, -1)}
_LEFT = {"E": "N", "N": "W", "W": "S", "S": "E"}
_RIGHT = {v: k for k, v in _LEFT.items()}
_OPPOSITE = {"E": "W", "W": "E", "N": "S", "S": "N"}


def _node(c: int, r: int) -> str:
    return f"I{c}{r}"


@dataclass(frozen=True)
class GridSpec:
    cols: int = 2
    rows: int = 2
    entry_flow: float = 1200.0  # vph per entry link
    turn_probs: tuple[float, float, float] = (0.6, 0.2, 0.2)  # through, left, right
    travel_time: float = 30.0
    cycle: float = 120.0
    vc: float = 0.8
    right_on_red: bool = True
    right_turn_flow: float = 1800.0
    phasing: str = "split"  # "split": one phase per approach; "protected": T+R and L per axis


def build_grid(spec: GridSpec = GridSpec(), travel_times: Optional[dict] = None) -> Network:
    """Grid network whose signalized movements share one saturation flow per intersection.

    The saturation flow at each intersection is the sum over phases of the
    largest movement flow in the phase, divided by ``vc``. Under the
    flow-proportional splits of :func:`split_greens` every critical movement
    then runs at ``vc``.
    """
    nodes = {(c, r) for c in range(spec.cols) for r in range(spec.rows)}
    links: dict[str, Link] = {}

    def incoming(node, side):
        """Link entering ``node`` from ``side``."""
        c, r = node
        dc, dr = HEADINGS[side]
        nb = (c + dc, r + dr)
        if nb in nodes:
            lid = f"{_node(*nb)}-{_node(*node)}"
            tt = spec.travel_time if travel_times is None else travel_times.get(lid, spec.travel_time)
            links.setdefault(lid, Link(lid, travel_time=tt))
        else:
            lid = f"in-{_node(*node)}{side}"
            links.setdefault(lid, Link(lid, travel_time=0.0, is_entry=True))
        return lid

    def outgoing(node, heading):
        c, r = node
        dc, dr = HEADINGS[heading]
        nb = (c + dc, r + dr)
        if nb in nodes:
            lid = f"{_node(*node)}-{_node(*nb)}"
            tt = spec.travel_time if travel_times is None else travel_times.get(lid, spec.travel_time)
            links.setdefault(lid, Link(lid, travel_time=tt))
        else:
            lid = f"out-{_node(*node)}{heading}"
            links.setdefault(lid, Link(lid, travel_time=0.0, is_exit=True))
        return lid

    if spec.phasing not in ("split", "protected"):
        raise ValueError(f"unknown phasing {spec.phasing!r}")
    p_t, p_l, p_r = spec.turn_probs
    raw: list[tuple] = []  # (from, to, node, kind, prob)
    phases: dict[str, list[list]] = {}
    for node in sorted(nodes):
        nid = _node(*node)
        ph = [[], [], [], []]
        for a, side in enumerate(("S", "N", "W", "E")):
            heading = _OPPOSITE[side]
            src = incoming(node, side)
            ns = side in ("N", "S")
            for kind, h, p in (
                (TurnKind.THROUGH, heading, p_t),
                (TurnKind.LEFT, _LEFT[heading], p_l),
                (TurnKind.RIGHT, _RIGHT[heading], p_r),
            ):
                if p <= 0:
                    continue
                dst = outgoing(node, h)
                raw.append((src, dst, nid, kind, p))
                if spec.phasing == "split":
                    ph[a].append((src, dst))
                else:
                    base = 0 if ns else 2
                    ph[base + (1 if kind == TurnKind.LEFT else 0)].append((src, dst))
        phases[nid] = ph

    routing = {}
    by_start: dict[str, list[tuple]] = {}
    for src, dst, nid, kind, p in raw:
        by_start.setdefault(src, []).append(((src, dst), p))
    for src, dst, nid, kind, p in raw:
        for nxt, q in by_start.get(dst, []):
            routing[((src, dst), nxt)] = q

    rates = {}
    for src, dst, nid, kind, p in raw:
        if links[src].is_entry:
            rates[(src, dst)] = spec.entry_flow * p

    # flows with placeholder saturation, then size saturation for the target VC
    proto = Network(
        links=tuple(links.values()),
        movements=tuple(Movement(s, d, 1.0, n, k) for s, d, n, k, _ in raw),
        routing=routing,
        demand=DemandProfile(rates),
    )
    flow = dict(zip(proto.movement_ids, proto.movement_flows()))
    node_sat = {}
    for nid, ph in phases.items():
        crit = sum(max(flow[mid] for mid in p) for p in ph if p)
        node_sat[nid] = crit / spec.vc
    movements = []
    for s, d, n, k, _ in raw:
        rtor = k == TurnKind.RIGHT and spec.right_on_red
        sat = spec.right_turn_flow if rtor else node_sat[n]
        movements.append(Movement(s, d, float(sat), n, k, always_served=rtor))
    intersections = tuple(
        Intersection(nid, tuple(tuple(p) for p in ph if p)) for nid, ph in sorted(phases.items())
    )
    return Network(
        links=tuple(links.values()),
        movements=tuple(movements),
        routing=routing,
        demand=DemandProfile(rates),
        intersections=intersections,
    )


def split_greens(network: Network, cycle: float) -> dict[str, tuple[float, ...]]:
    """Greens proportional to each phase's largest flow ratio ``lambda / s``."""
    flow = dict(zip(network.movement_ids, network.movement_flows()))
    out = {}
    for node in network.intersections:
        y = [max(flow[mid] / network.movement(mid).saturation_flow for mid in ph) for ph in node.phases]
        total = sum(y)
        if total <= 0:
            out[node.id] = tuple([cycle / len(y)] * len(y))
        else:
            out[node.id] = tuple(float(cycle * v / total) for v in y)
    return out


def fixed_time_plan(
    network: Network,
    cycle: float = 120.0,
    offsets: Optional[dict[str, float]] = None,
    greens: Optional[dict[str, tuple[float, ...]]] = None,
    speedup: float = 1.0,
    lost_time: float = 0.0,
) -> SignalPlan:
    """Fixed-time plan with flow-proportional splits unless ``greens`` are given."""
    greens = {**split_greens(network, cycle), **(greens or {})}
    controls = {}
    for node in network.intersections:
        g = greens[node.id]
        off = (offsets or {}).get(node.id, 0.0)
        controls[node.id] = FixedTimeControl(cycle, tuple(g), off, speedup, lost_time)
    return SignalPlan(controls)


def max_pressure_plan(network: Network, cycle: float = 120.0, switches: int = 4,
                      lost_time: float = 0.0) -> SignalPlan:
    return SignalPlan({
        node.id: MaxPressureConfig(cycle, switches, lost_time) for node in network.intersections
    })


def control_plan(network: Network, control: str, cycle: float = 120.0) -> SignalPlan:
    """``ft``, ``mp4`` or ``mp6`` on a grid network."""
    if control == "ft":
        return fixed_time_plan(network, cycle)
    if control in ("mp4", "mp6"):
        return max_pressure_plan(network, cycle, int(control[2:]))
    raise ValueError(f"unknown control {control!r}")


def random_grid(rng: np.random.Generator) -> tuple[Network, SignalPlan]:
    """Random multi-intersection grid with random timing, delays and demand."""
    cols, rows = (2, 1) if rng.random() < 0.5 else (2, 2)
    probs = rng.dirichlet([3.0, 1.0, 1.0])
    spec = GridSpec(
        cols=cols,
        rows=rows,
        entry_flow=float(rng.uniform(100, 700)),
        turn_probs=tuple(float(p) for p in probs),
        travel_time=float(rng.uniform(5, 40)),
        vc=float(rng.uniform(0.5, 1.1)),
        right_on_red=bool(rng.random() < 0.5),
    )
    net = build_grid(spec)
    tt = {l.id: float(rng.uniform(3, 45)) for l in net.links if not (l.is_entry or l.is_exit)}
    net = build_grid(spec, travel_times=tt)
    cycle = float(rng.choice([60.0, 90.0, 120.0]))
    greens, offsets = {}, {}
    for node in net.intersections:
        w = rng.dirichlet(np.ones(len(node.phases))) * 0.6 + 0.4 / len(node.phases)
        greens[node.id] = tuple(float(x) for x in w * cycle * rng.uniform(0.85, 1.0))
        offsets[node.id] = float(rng.uniform(0, cycle))
    return net, fixed_time_plan(net, cycle, offsets, greens)
