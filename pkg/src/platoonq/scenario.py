"""Scenario files: a network plus its signal settings in one YAML document.

Top-level sections are ``links``, ``movements``, ``routing``, ``demands``
and ``signals``. Rates are vehicles per hour, times are seconds. Movements
are referenced as ``[from_link, to_link]``. Unknown fields are errors.

Example::

    links:
      - {id: in, is_entry: true}
      - {id: out, is_exit: true, travel_time: 0}
    movements:
      - {from_link: in, to_link: out, saturation_flow: 1800, intersection: A}
    routing: []
    demands:
      - {movement: [in, out], rate: 600}
    signals:
      - id: A
        phases: [[[in, out]]]
        fixed_time: {cycle: 60, greens: [30]}
        max_pressure: {cycle: 60, switches_per_cycle: 4}
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import yaml

from .network import (
    DemandProfile,
    Intersection,
    Link,
    Movement,
    MovementId,
    Network,
    TurnKind,
    validate,
)
from .signals import FixedTimeControl, MaxPressureConfig, SignalPlan

SECTIONS = ("links", "movements", "routing", "demands", "signals")
_LINK_FIELDS = {"id", "travel_time", "storage_capacity", "is_entry", "is_exit"}
_MOVEMENT_FIELDS = {"from_link", "to_link", "saturation_flow", "intersection", "turn_kind", "always_served"}
_ROUTING_FIELDS = {"from", "to", "p"}
_DEMAND_FIELDS = {"movement", "rate"}
_SIGNAL_FIELDS = {"id", "phases", "min_green", "fixed_time", "max_pressure"}
_FT_FIELDS = {"cycle", "greens", "offset", "g_speed", "lost_time"}
_MP_FIELDS = {"cycle", "switches_per_cycle", "lost_time"}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    network: Network
    fixed_time: Mapping[str, FixedTimeControl] = field(default_factory=dict)
    max_pressure: Mapping[str, MaxPressureConfig] = field(default_factory=dict)

    def plan(self, control: str) -> SignalPlan:
        """Signal plan for ``ft``, ``mp`` (as configured), ``mp4`` or ``mp6``."""
        if control == "ft":
            return SignalPlan(dict(self.fixed_time))
        if control in ("mp", "mp4", "mp6"):
            controls = {}
            for node in self.network.intersections:
                cfg = self.max_pressure.get(node.id)
                if cfg is None:
                    ft = self.fixed_time.get(node.id)
                    if ft is None:
                        continue
                    cfg = MaxPressureConfig(ft.cycle)
                if control != "mp":
                    cfg = MaxPressureConfig(cfg.cycle, int(control[2:]), cfg.lost_time)
                controls[node.id] = cfg
            return SignalPlan(controls)
        raise ScenarioError(f"unknown control {control!r}")

    def digest(self) -> str:
        """SHA-256 of the canonical YAML form."""
        return hashlib.sha256(dumps(self).encode()).hexdigest()


def _check_fields(kind: str, item: Any, allowed: set[str], required: set[str] = frozenset()) -> dict:
    if not isinstance(item, dict):
        raise ScenarioError(f"{kind} entry must be a mapping, got {item!r}")
    extra = set(item) - allowed
    if extra:
        raise ScenarioError(f"unknown field(s) {sorted(extra)} in {kind} entry")
    missing = set(required) - set(item)
    if missing:
        raise ScenarioError(f"{kind} entry missing {sorted(missing)}")
    return item


def _mid(value: Any, where: str) -> MovementId:
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise ScenarioError(f"{where}: movement must be [from_link, to_link], got {value!r}")
    return (str(value[0]), str(value[1]))


def from_dict(doc: Mapping[str, Any], check: bool = True) -> Scenario:
    """Build a scenario from parsed YAML; raises ScenarioError on bad input."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping")
    extra = set(doc) - set(SECTIONS)
    if extra:
        raise ScenarioError(f"unknown section(s) {sorted(extra)}")
    for name in ("links", "movements"):
        if name not in doc:
            raise ScenarioError(f"missing section {name!r}")

    links = []
    for item in doc["links"] or []:
        _check_fields("link", item, _LINK_FIELDS, {"id"})
        cap = item.get("storage_capacity")
        links.append(Link(
            str(item["id"]),
            float(item.get("travel_time", 0.0)),
            None if cap is None else int(cap),
            bool(item.get("is_entry", False)),
            bool(item.get("is_exit", False)),
        ))

    movements = []
    for item in doc["movements"] or []:
        _check_fields("movement", item, _MOVEMENT_FIELDS, {"from_link", "to_link", "saturation_flow", "intersection"})
        try:
            kind = TurnKind(item.get("turn_kind", "through"))
        except ValueError:
            raise ScenarioError(f"bad turn_kind {item.get('turn_kind')!r}") from None
        movements.append(Movement(
            str(item["from_link"]),
            str(item["to_link"]),
            float(item["saturation_flow"]),
            str(item["intersection"]),
            kind,
            bool(item.get("always_served", False)),
        ))

    routing: dict[tuple[MovementId, MovementId], float] = {}
    for item in doc.get("routing") or []:
        _check_fields("routing", item, _ROUTING_FIELDS, _ROUTING_FIELDS)
        key = (_mid(item["from"], "routing"), _mid(item["to"], "routing"))
        if key in routing:
            raise ScenarioError(f"duplicate routing entry {key}")
        routing[key] = float(item["p"])

    rates: dict[MovementId, float] = {}
    for item in doc.get("demands") or []:
        _check_fields("demand", item, _DEMAND_FIELDS, _DEMAND_FIELDS)
        mid = _mid(item["movement"], "demand")
        if mid in rates:
            raise ScenarioError(f"duplicate demand for {mid}")
        rates[mid] = float(item["rate"])

    intersections, fixed, pressure = [], {}, {}
    for item in doc.get("signals") or []:
        _check_fields("signal", item, _SIGNAL_FIELDS, {"id"})
        nid = str(item["id"])
        phases = tuple(
            tuple(_mid(m, f"signal {nid}") for m in ph) for ph in (item.get("phases") or [])
        )
        intersections.append(Intersection(nid, phases, tuple(float(v) for v in item.get("min_green") or ())))
        ft = item.get("fixed_time")
        if ft is not None:
            _check_fields("fixed_time", ft, _FT_FIELDS, {"cycle", "greens"})
            try:
                fixed[nid] = FixedTimeControl(
                    float(ft["cycle"]),
                    tuple(float(g) for g in ft["greens"]),
                    float(ft.get("offset", 0.0)),
                    float(ft.get("g_speed", 1.0)),
                    float(ft.get("lost_time", 0.0)),
                )
            except ValueError as exc:
                raise ScenarioError(f"signal {nid}: {exc}") from None
            if len(fixed[nid].greens) != len(phases):
                raise ScenarioError(f"signal {nid}: {len(phases)} phases but {len(fixed[nid].greens)} greens")
        mp = item.get("max_pressure")
        if mp is not None:
            _check_fields("max_pressure", mp, _MP_FIELDS, {"cycle"})
            try:
                pressure[nid] = MaxPressureConfig(
                    float(mp["cycle"]), int(mp.get("switches_per_cycle", 4)), float(mp.get("lost_time", 0.0))
                )
            except ValueError as exc:
                raise ScenarioError(f"signal {nid}: {exc}") from None

    # movements may name intersections that carry no signal entry
    named = {m.intersection_id for m in movements} - {i.id for i in intersections}
    intersections.extend(Intersection(nid) for nid in sorted(named))

    network = Network(tuple(links), tuple(movements), routing, DemandProfile(rates), tuple(intersections))
    if check:
        bad = validate(network)
        if bad:
            raise ScenarioError("invalid network: " + "; ".join(str(v) for v in bad))
    return Scenario(network, fixed, pressure)


def loads(text: str, check: bool = True) -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"not valid YAML: {exc}") from None
    return from_dict(doc, check)


def load(path: Union[str, Path], check: bool = True) -> Scenario:
    return loads(Path(path).read_text(), check)


def to_dict(scenario: Scenario) -> dict:
    net = scenario.network
    links = []
    for l in net.links:
        d: dict[str, Any] = {"id": l.id, "travel_time": l.travel_time}
        if l.storage_capacity is not None:
            d["storage_capacity"] = l.storage_capacity
        if l.is_entry:
            d["is_entry"] = True
        if l.is_exit:
            d["is_exit"] = True
        links.append(d)
    movements = []
    for m in net.movements:
        d = {
            "from_link": m.from_link,
            "to_link": m.to_link,
            "saturation_flow": m.saturation_flow,
            "intersection": m.intersection_id,
            "turn_kind": m.turn_kind.value,
        }
        if m.always_served:
            d["always_served"] = True
        movements.append(d)
    idx = net.movement_index
    routing = [
        {"from": list(a), "to": list(b), "p": p}
        for (a, b), p in sorted(net.routing.items(), key=lambda kv: (idx[kv[0][0]], idx[kv[0][1]]))
    ]
    demands = [
        {"movement": list(mid), "rate": net.demand.rate(mid)}
        for mid in net.movement_ids
        if net.demand.rate(mid) > 0
    ]
    signals = []
    for node in net.intersections:
        d = {"id": node.id, "phases": [[list(m) for m in ph] for ph in node.phases]}
        if node.min_green:
            d["min_green"] = list(node.min_green)
        ft = scenario.fixed_time.get(node.id)
        if ft is not None:
            d["fixed_time"] = {
                "cycle": ft.cycle,
                "greens": [float(g) for g in ft.greens],
                "offset": ft.offset,
                "g_speed": ft.speedup,
                "lost_time": ft.lost_time,
            }
        mp = scenario.max_pressure.get(node.id)
        if mp is not None:
            d["max_pressure"] = {
                "cycle": mp.cycle,
                "switches_per_cycle": mp.switches_per_cycle,
                "lost_time": mp.lost_time,
            }
        signals.append(d)
    return {"links": links, "movements": movements, "routing": routing, "demands": demands, "signals": signals}


def dumps(scenario: Scenario) -> str:
    return yaml.safe_dump(to_dict(scenario), sort_keys=False, default_flow_style=None)


def dump(scenario: Scenario, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps(scenario))


def from_network(network: Network, cycle: float = 120.0, fixed: Optional[SignalPlan] = None) -> Scenario:
    """Wrap a network with a fixed-time plan and matching max-pressure settings."""
    from .grids import fixed_time_plan

    plan = fixed or fixed_time_plan(network, cycle)
    ft = {k: v for k, v in plan.controls.items() if isinstance(v, FixedTimeControl)}
    mp = {k: MaxPressureConfig(v.cycle, 4) for k, v in ft.items()}
    return Scenario(network, ft, mp)
