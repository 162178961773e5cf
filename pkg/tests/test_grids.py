import numpy as np
import pytest

from platoonq.grids import (
    GridSpec,
    build_grid,
    control_plan,
    fixed_time_plan,
    random_grid,
    split_greens,
)
from platoonq.network import TurnKind, validate
from platoonq.signals import FixedTimeControl, MaxPressureConfig


@pytest.fixture(scope="module")
def grid():
    return build_grid(GridSpec())


def test_grid_is_valid(grid):
    assert validate(grid) == []
    assert len(grid.intersections) == 4
    assert sum(1 for l in grid.links if l.is_entry) == 8
    assert sum(1 for l in grid.links if l.is_exit) == 8


def test_entry_demand_and_turn_split(grid):
    assert sum(grid.demand.rates.values()) == pytest.approx(8 * 1200.0)
    flows = dict(zip(grid.movement_ids, grid.movement_flows()))
    for link in grid.links:
        if link.is_entry:
            out = {m.turn_kind: flows[m.id] for m in grid.movements if m.from_link == link.id}
            assert out[TurnKind.THROUGH] == pytest.approx(720.0)
            assert out[TurnKind.LEFT] == pytest.approx(240.0)
            assert out[TurnKind.RIGHT] == pytest.approx(240.0)


def test_right_turns_always_served(grid):
    for m in grid.movements:
        assert m.always_served == (m.turn_kind == TurnKind.RIGHT)


def test_split_phasing_load_matches_target(grid):
    flows = dict(zip(grid.movement_ids, grid.movement_flows()))
    for node in grid.intersections:
        crit = sum(max(flows[mid] for mid in ph) for ph in node.phases)
        sat = grid.movement(node.phases[0][0]).saturation_flow
        assert crit / sat == pytest.approx(0.8)


def test_split_greens_fill_cycle(grid):
    greens = split_greens(grid, 120.0)
    for g in greens.values():
        assert sum(g) == pytest.approx(120.0)
        assert all(isinstance(v, float) for v in g)


def test_plans_by_control(grid):
    assert isinstance(control_plan(grid, "ft").controls["I00"], FixedTimeControl)
    assert control_plan(grid, "mp6").controls["I00"].decision_interval == 20.0
    with pytest.raises(ValueError):
        control_plan(grid, "adaptive")
    with pytest.raises(ValueError):
        build_grid(GridSpec(phasing="diamond"))


def test_fixed_time_overrides(grid):
    plan = fixed_time_plan(grid, 90.0, offsets={"I00": 10.0}, greens={"I00": (30.0, 20.0, 20.0, 20.0)})
    assert plan.controls["I00"].offset == 10.0
    assert plan.controls["I00"].greens == (30.0, 20.0, 20.0, 20.0)


@pytest.mark.parametrize("seed", range(5))
def test_random_grids_are_valid(seed):
    net, plan = random_grid(np.random.default_rng(seed))
    assert validate(net) == []
    assert set(plan.controls) == {n.id for n in net.intersections}
