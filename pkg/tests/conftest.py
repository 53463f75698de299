import numpy as np
import pytest

from robustgne.game import BoxSet, CommGraph, DemandResponseCost, Ellipsoid, UncertainGame

DEMO_ELL = Ellipsoid([2.0, 2.0], [3.0, 2.0])


def demo_game(budget=5.0, n_players=10):
    return UncertainGame([BoxSet.cube(-15, 20, 2)] * n_players,
                         DemandResponseCost(DemandResponseCost.benchmark_nominal(n_players)),
                         [DEMO_ELL] * n_players, budget, CommGraph.ring(n_players))


def random_small_game(rng, n_players):
    """Path-graph game on [-5, 5]^2 with random nominal profile, ellipses and budget."""
    boxes = [BoxSet.cube(-5, 5, 2)] * n_players
    nominal = rng.uniform(-3, 4, size=(n_players, 2))
    ells = [Ellipsoid(rng.uniform(0.5, 2, 2), rng.uniform(0.5, 1.5, 2)) for _ in range(n_players)]
    edges = [(i, i + 1) for i in range(n_players - 1)]
    return UncertainGame(boxes, DemandResponseCost(nominal), ells, float(rng.uniform(1, 4)),
                         CommGraph.from_edges(n_players, edges))


@pytest.fixture
def game10():
    return demo_game()


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
