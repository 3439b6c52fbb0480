import numpy as np
import pytest

from cavi_mf.engine import SweepSchedule, solve
from cavi_mf.marginal import ProductState, gaussian_marginal
from cavi_mf.potentials import make_quadratic

# lines reported by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def p2():
    """psi = x^T A x / 2 with A = [[2,1],[1,2]] (lambda = 1, L = 3)."""
    return make_quadratic([[2.0, 1.0], [1.0, 2.0]], [0.0, 0.0])


@pytest.fixture(scope="session")
def start_11():
    return ProductState((gaussian_marginal(1.0, 1.0), gaussian_marginal(1.0, 1.0)))


@pytest.fixture(scope="session")
def run_2x2(p2, start_11):
    """50-sweep grid run on the 2x2 target from N(1,1) x N(1,1)."""
    return solve(p2, start_11, SweepSchedule(sweeps=50, tol=1e-300), record_half_sweeps=True)


def random_spd(rng, d, cond_floor=0.2):
    B = rng.normal(size=(d, d))
    return B @ B.T / d + cond_floor * np.eye(d)
