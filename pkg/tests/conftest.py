import pytest

from platoonq.network import DemandProfile, Intersection, Link, Movement, Network, TurnKind


def two_node_network(storage=None, demand=600.0, travel=20.0) -> Network:
    """Entry -> A -> mid -> B -> exit, plus a side exit at A.

    A serves two movements in separate phases; B has one movement.
    """
    links = (
        Link("in", 0.0, storage, is_entry=True),
        Link("mid", travel, storage),
        Link("side", 0.0, is_exit=True),
        Link("out", 0.0, is_exit=True),
    )
    movements = (
        Movement("in", "mid", 1800.0, "A"),
        Movement("in", "side", 900.0, "A", TurnKind.LEFT),
        Movement("mid", "out", 1800.0, "B"),
    )
    routing = {
        (("in", "mid"), ("mid", "out")): 1.0,
    }
    demand = DemandProfile({("in", "mid"): demand, ("in", "side"): demand / 3})
    nodes = (
        Intersection("A", ((("in", "mid"),), (("in", "side"),))),
        Intersection("B", ((("mid", "out"),),)),
    )
    return Network(links, movements, routing, demand, nodes)


def single_queue_network(rate: float, saturation: float, storage=None) -> Network:
    return Network(
        (Link("in", 0.0, storage, is_entry=True), Link("out", 0.0, is_exit=True)),
        (Movement("in", "out", saturation, "A"),),
        {},
        DemandProfile({("in", "out"): rate}),
        (Intersection("A", ((("in", "out"),),)),),
    )


@pytest.fixture
def two_node():
    return two_node_network()


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Collects one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
