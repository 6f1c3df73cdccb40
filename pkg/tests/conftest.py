import numpy as np
import pytest

from fracobstacle.grid import WeightedGrid
from fracobstacle.obstacles import CapObstacle
from fracobstacle.solver import ObstacleProblem, SolverOptions, solve


def cap_problem(h, n=1, s=0.5, R=1.0, height=None, radius=0.5, tol=1e-9):
    grid = WeightedGrid.box(n, 1 - 2 * s, h, R=R, height=height)
    obs = CapObstacle(n, radius=radius).normalized(3)
    return ObstacleProblem(grid, obs, options=SolverOptions(tol=tol))


@pytest.fixture(scope="session")
def cap_solution_1d():
    """n = 1 concave cap, s = 1/2, h = 1/128."""
    return solve(cap_problem(1 / 128))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        terminalreporter.write_line(results[num])
