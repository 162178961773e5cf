import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from platoonq.network import DemandProfile, Intersection, Link, Movement, Network
from platoonq.signals import (
    ALWAYS,
    FixedTimeControl,
    FixedTimePlan,
    MaxPressureConfig,
    PressureTable,
    SignalPlan,
    first_slot,
    green_ratio,
    max_pressure_decide,
    next_slot,
    service_rate,
    slot_phase,
)


def test_service_rate_green_then_red():
    plan = FixedTimePlan(cycle=2.0, offset=0.0, green=1.0)
    assert service_rate(plan, 30.0, 0.5) == 30.0
    assert service_rate(plan, 30.0, 1.5) == 0.0


def test_service_rate_at_switch_instant_is_red():
    plan = FixedTimePlan(cycle=2.0, offset=0.0, green=1.0)
    assert service_rate(plan, 30.0, 1.0) == 0.0
    assert service_rate(plan, 30.0, 2.0) == 30.0


def test_speedup_keeps_green_ratio_and_shrinks_period():
    plan = FixedTimePlan(cycle=2.0, offset=0.0, green=1.0).sped_up(3.0)
    assert green_ratio(plan) == 0.5
    assert plan.period == pytest.approx(2.0 / 3.0)
    assert service_rate(plan, 90.0, 0.2) == 90.0
    assert service_rate(plan, 90.0, 0.4) == 0.0


def test_full_green_never_switches():
    assert FixedTimePlan(60.0, 0.0, 60.0).state(17.0) == (True, math.inf)


def test_offset_shifts_windows():
    plan = FixedTimePlan(cycle=100.0, offset=30.0, green=40.0)
    assert plan.state(10.0) == (False, 30.0)
    assert plan.state(35.0) == (True, 70.0)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        service_rate(FixedTimePlan(2.0, 0.0, 1.0), 1.0, -0.1)


@pytest.mark.parametrize("cycle,green", [(0.0, 0.0), (10.0, 11.0), (10.0, 0.0)])
def test_bad_plans_rejected(cycle, green):
    with pytest.raises(ValueError):
        FixedTimePlan(cycle, 0.0, green)


@settings(max_examples=200, deadline=None)
@given(
    cycle=st.floats(1.0, 200.0),
    frac=st.floats(0.05, 0.95),
    offset_frac=st.floats(0.0, 0.999),
    t=st.floats(0.0, 1e4),
    factor=st.floats(0.2, 5.0),
)
def test_speedup_time_rescaling(cycle, frac, offset_frac, t, factor):
    plan = FixedTimePlan(cycle, offset_frac * cycle, frac * cycle)
    fast = plan.sped_up(factor)
    g_slow, n_slow = plan.state(factor * t)
    g_fast, n_fast = fast.state(t)
    # away from switch instants the states match
    if min(abs(n_slow - factor * t), abs(n_fast - t) * factor) > 1e-6 * cycle:
        assert g_slow == g_fast
        assert n_fast == pytest.approx(n_slow / factor, rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(cycle=st.floats(1.0, 200.0), frac=st.floats(0.05, 0.95), t=st.floats(0.0, 1e5))
def test_next_switch_is_in_the_future(cycle, frac, t):
    green, nxt = FixedTimePlan(cycle, 0.0, frac * cycle).state(t)
    assert nxt > t


def _control_node():
    phases = ((("a", "x"),), (("b", "x"),), (("a", "x"), ("c", "x")))
    return Intersection("N", phases)


def test_fixed_time_slots_with_lost_time_and_all_red():
    ctrl = FixedTimeControl(100.0, (30.0, 40.0), lost_time=3.0)
    assert ctrl.slots() == [(0.0, -1), (3.0, 0), (30.0, -1), (33.0, 1), (70.0, -1)]


def test_movement_timing_merges_adjacent_and_wrapped_windows():
    ctrl = FixedTimeControl(90.0, (30.0, 30.0, 30.0))
    node = _control_node()
    t = ctrl.movement_timing(node, ("a", "x"))
    # served in phase 0 and phase 2, which wrap around into one 60 s window
    assert len(t.windows) == 1
    assert t.windows[0].green == 60.0
    assert t.state(10.0)[0] and t.state(70.0)[0] and not t.state(45.0)[0]


def test_slot_iteration_and_times():
    ctrl = FixedTimeControl(60.0, (20.0, 40.0), offset=10.0, speedup=2.0)
    n, s = first_slot(ctrl, 0.0)
    assert ctrl.slot_time(n, s) <= 0.0 < ctrl.slot_time(*next_slot(ctrl, n, s))
    assert slot_phase(ctrl, 0) == 0
    assert ctrl.slot_time(1, 1) == pytest.approx((60 + 10 + 20) / 2.0)


@pytest.mark.parametrize("kwargs", [
    dict(cycle=60.0, greens=(40.0, 30.0)),
    dict(cycle=60.0, greens=(0.0, 30.0)),
    dict(cycle=60.0, greens=(30.0,), offset=60.0),
    dict(cycle=60.0, greens=(3.0,), lost_time=3.0),
])
def test_bad_fixed_time_controls(kwargs):
    with pytest.raises(ValueError):
        FixedTimeControl(**kwargs)


def test_signal_plan_timings():
    net = Network(
        (Link("a", is_entry=True), Link("x", is_exit=True)),
        (Movement("a", "x", 1000.0, "N"), Movement("a", "x2", 1000.0, "M", always_served=True)),
        {},
        DemandProfile({}),
        (Intersection("N", ((("a", "x"),),)),),
    )
    plan = SignalPlan({"N": FixedTimeControl(60.0, (30.0,))})
    timings = plan.movement_timings(net)
    assert timings[("a", "x2")] is ALWAYS
    assert timings[("a", "x")].windows[0].green == 30.0
    with pytest.raises(TypeError):
        SignalPlan({"N": MaxPressureConfig(60.0)}).movement_timings(net)


def test_max_pressure_config():
    assert MaxPressureConfig(120.0, 4).decision_interval == 30.0
    assert MaxPressureConfig(120.0, 6).decision_interval == 20.0
    with pytest.raises(ValueError):
        MaxPressureConfig(120.0, 0)


# ---- max pressure -----------------------------------------------------------

def pressure_network(routing_p=1.0):
    """Two phases at N: phase 0 serves u->d (feeding d->e), phase 1 serves v->w."""
    links = (Link("u", is_entry=True), Link("v", is_entry=True), Link("d"),
             Link("e", is_exit=True), Link("w", is_exit=True))
    movements = (
        Movement("u", "d", 1000.0, "N"),
        Movement("v", "w", 1000.0, "N"),
        Movement("d", "e", 1000.0, "M"),
    )
    routing = {(("u", "d"), ("d", "e")): routing_p}
    nodes = (Intersection("N", ((("u", "d"),), (("v", "w"),))), Intersection("M", ((("d", "e"),),)))
    return Network(links, movements, routing, DemandProfile({}), nodes)


def test_single_queued_movement_wins():
    net = pressure_network()
    assert max_pressure_decide({("v", "w"): 5}, net.intersections[0], net) == 1


def test_all_empty_ties_to_first_phase():
    net = pressure_network()
    assert max_pressure_decide({}, net.intersections[0], net) == 0


def test_downstream_queue_cancels_pressure():
    net = pressure_network()
    queues = {("u", "d"): 10, ("d", "e"): 10, ("v", "w"): 4}
    table = PressureTable(net, net.intersections[0])
    x = [queues.get(mid, 0) for mid in net.movement_ids]
    assert table.pressures(x) == [0.0, 4000.0]
    assert max_pressure_decide(queues, net.intersections[0], net) == 1


def test_empty_phase_table_is_an_error():
    net = pressure_network()
    with pytest.raises(ValueError):
        PressureTable(net, Intersection("M"))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=3, max_size=3))
def test_decision_maximizes_pressure(x):
    net = pressure_network()
    table = PressureTable(net, net.intersections[0])
    p = table.pressures(x)
    k = table.decide(x)
    assert p[k] == max(p)
    assert all(p[j] < p[k] for j in range(k))
