import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from platoonq.fluid import (
    FluidIntegrationError,
    FluidSystem,
    average_queue,
    check_homogeneity,
    check_speedup,
    integrate,
    network_homogeneity,
    throughput,
    total_average_queue,
)
from platoonq.grids import fixed_time_plan, random_grid
from platoonq.signals import FixedTimePlan, MovementTiming

from conftest import two_node_network

# green on [1, 2) of every 2-unit period
TIMING = MovementTiming((FixedTimePlan(cycle=2.0, offset=1.0, green=1.0),))


def example_queue(gain=1.0, capacity=math.inf):
    return FluidSystem.single_queue(10.0 * gain, 30.0 * gain, TIMING, capacity)


def test_example_trajectory_breakpoints():
    traj = integrate(example_queue(), [0.0], 4.0)
    assert traj.breakpoints(0)[:4] == [(0.0, 0.0), (1.0, 10.0), (1.5, 0.0), (2.0, 0.0)]
    assert traj.value(0, 0.5) == pytest.approx(5.0)
    assert traj.value(0, 1.25) == pytest.approx(5.0)


def test_example_average_and_throughput():
    traj = integrate(example_queue(), [0.0], 4.0)
    assert average_queue(traj, 0, 0.0, 2.0) == pytest.approx(3.75, abs=1e-12)
    assert throughput(traj, 0, 0.0, 2.0) == pytest.approx(10.0, abs=1e-12)


def test_zero_trajectory_average():
    traj = integrate(FluidSystem.single_queue(0.0, 30.0, TIMING), [0.0], 4.0)
    assert average_queue(traj, 0, 0.0, 2.0) == 0.0


def test_scaled_example_infinite_capacity():
    traj = integrate(example_queue(3.0), [0.0], 4.0)
    assert traj.value(0, 1.0) == pytest.approx(30.0, abs=1e-12)
    assert throughput(traj, 0, 0.0, 2.0) == pytest.approx(30.0, abs=1e-12)
    assert average_queue(traj, 0, 0.0, 2.0) == pytest.approx(3 * 3.75, abs=1e-12)


def test_scaled_example_with_capacity_blocks():
    traj = integrate(example_queue(3.0, capacity=20.0), [0.0], 8.0)
    assert traj.value(0, 2.0 / 3.0) == pytest.approx(20.0, abs=1e-12)
    assert traj.value(0, 1.0) == pytest.approx(20.0, abs=1e-12)
    # per red-plus-green period: 20 admitted during red, 30 during green, half refused
    assert throughput(traj, 0, 2.0, 4.0) * 2.0 == pytest.approx(50.0, abs=1e-9)
    assert traj.cumulative(traj.dropped, 0, 4.0) - traj.cumulative(traj.dropped, 0, 2.0) == pytest.approx(10.0)


def test_scaled_example_per_period_counts():
    """Per 2-unit period the full queue passes 50 vehicles: a rate of 25 per unit."""
    traj = integrate(example_queue(3.0, capacity=20.0), [0.0], 8.0)
    assert throughput(traj, 0, 2.0, 8.0) == pytest.approx(25.0, abs=1e-9)
    assert throughput(traj, 0, 2.0, 8.0) / 45.0 == pytest.approx(5.0 / 9.0, abs=1e-9)


def test_sped_up_capacity_queue_never_blocks():
    system = example_queue(3.0, capacity=20.0).sped_up(3.0)
    traj = integrate(system, [0.0], 8.0)
    assert traj.dropped[-1, 0] == 0.0
    assert traj.queue[:, 0].max() == pytest.approx(10.0)
    assert throughput(traj, 0, 2.0, 8.0) == pytest.approx(30.0, abs=1e-9)


def test_sped_up_queue_at_capacity_demand():
    """Demand raised to the green-time capacity of 45 still passes without loss."""
    system = FluidSystem.single_queue(45.0, 90.0, TIMING, 20.0).sped_up(3.0)
    traj = integrate(system, [0.0], 8.0)
    assert traj.dropped[-1, 0] == 0.0
    assert throughput(traj, 0, 2.0, 8.0) == pytest.approx(45.0, abs=1e-9)


def test_homogeneity_identity_and_breakdown():
    assert check_homogeneity(example_queue(), [0.0], 1.0, 6.0) == 0.0
    assert check_homogeneity(example_queue(), [0.0], 3.0, 6.0) <= 1e-12
    assert check_homogeneity(example_queue(capacity=20.0), [0.0], 3.0, 6.0) > 0.1


def test_speedup_identity():
    assert check_speedup(example_queue(), [0.0], 1.0, 6.0) == 0.0


def test_conservation_and_bounds_on_network():
    net = two_node_network(storage=8, demand=1500.0, travel=7.0)
    system = FluidSystem.from_network(net, fixed_time_plan(net, 60.0))
    traj = integrate(system, np.zeros(len(system.ids)), 900.0)
    assert np.all(traj.queue >= 0)
    assert np.all(traj.queue <= system.capacity + 1e-12)
    lhs = traj.queue - traj.queue[0]
    assert np.allclose(lhs, traj.arrivals - traj.departures, atol=1e-9)
    assert np.all(traj.departure_rate <= traj.service_rate + 1e-15)
    assert traj.dropped[-1].sum() > 0  # the entry queue fills up


def test_boundary_buffer_conserves_vehicles():
    """Flow leaving A either joins B, waits at B's boundary, or is still in transit."""
    net = two_node_network(storage=5, demand=1600.0, travel=0.0)
    # B is red for half the cycle, so mid fills and flow from A has to wait
    system = FluidSystem.from_network(net, fixed_time_plan(net, 60.0, greens={"B": (30.0,)}))
    traj = integrate(system, np.zeros(len(system.ids)), 600.0)
    up, down = system.ids.index(("in", "mid")), system.ids.index(("mid", "out"))
    sent = traj.departures[:, up]
    assert traj.held[-1, down] > 0
    assert np.allclose(sent, traj.arrivals[:, down] + traj.buffer[:, down], atol=1e-9)


def test_delayed_inflow_replays_departure_rate_exactly():
    net = two_node_network(travel=13.0)
    system = FluidSystem.from_network(net, fixed_time_plan(net, 60.0))
    traj = integrate(system, np.zeros(len(system.ids)), 600.0)
    up, down = system.ids.index(("in", "mid")), system.ids.index(("mid", "out"))
    for k in range(len(traj.times) - 1):
        t = 0.5 * (traj.times[k] + traj.times[k + 1])
        src = np.searchsorted(traj.times, t - 13.0, side="right") - 1
        expected = traj.departure_rate[src, up] if t >= 13.0 else 0.0
        assert traj.offered_rate[k, down] == expected


def test_initial_state_errors():
    with pytest.raises(ValueError):
        integrate(example_queue(), [-1.0], 1.0)
    with pytest.raises(ValueError):
        integrate(example_queue(capacity=5.0), [6.0], 1.0)
    with pytest.raises(ValueError):
        integrate(example_queue(), [0.0], 0.0)


def test_event_limit_reports_progress():
    with pytest.raises(FluidIntegrationError, match="event limit"):
        integrate(example_queue(), [0.0], 1000.0, max_events=10)


def test_window_outside_trajectory():
    traj = integrate(example_queue(), [0.0], 4.0)
    with pytest.raises(ValueError):
        average_queue(traj, 0, 3.0, 2.0)


def test_total_average_is_sum_of_movements():
    net = two_node_network()
    system = FluidSystem.from_network(net, fixed_time_plan(net, 60.0))
    traj = integrate(system, np.zeros(len(system.ids)), 600.0)
    parts = [average_queue(traj, i, 120.0, 360.0) for i in range(len(system.ids))]
    assert total_average_queue(traj, 120.0, 360.0) == pytest.approx(sum(parts), rel=1e-15)


@settings(max_examples=40, deadline=None)
@given(
    e=st.floats(0.5, 20.0), c=st.floats(1.0, 60.0), frac=st.floats(0.1, 0.9),
    x0=st.floats(0.0, 30.0), gain=st.floats(0.2, 5.0),
)
def test_single_queue_homogeneity_property(e, c, frac, x0, gain):
    timing = MovementTiming((FixedTimePlan(2.0, 0.0, 2.0 * frac),))
    system = FluidSystem.single_queue(e, c, timing)
    assert check_homogeneity(system, [x0], gain, 10.0) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(
    e=st.floats(0.5, 20.0), c=st.floats(1.0, 60.0), frac=st.floats(0.1, 0.9),
    x0=st.floats(0.0, 30.0), g=st.floats(0.3, 4.0),
)
def test_single_queue_speedup_property(e, c, frac, x0, g):
    timing = MovementTiming((FixedTimePlan(2.0, 0.0, 2.0 * frac),))
    system = FluidSystem.single_queue(e, c, timing)
    assert check_speedup(system, [x0], g, 10.0) <= 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_random_grid_homogeneity_and_speedup(seed):
    rng = np.random.default_rng(100 + seed)
    net, plan = random_grid(rng)
    system = FluidSystem.from_network(net, plan)
    x0 = rng.uniform(0, 10, len(system.ids))
    assert check_homogeneity(system, x0, 2.5, 1200.0) <= 1e-9
    assert check_speedup(system, x0, 1.5, 1200.0) <= 1e-9
    assert network_homogeneity(net, plan, 3.0, 1200.0, x0) <= 1e-9
