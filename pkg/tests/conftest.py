import numpy as np
import pytest

from vbagp import gp
from vbagp.core import RandomStream


@pytest.fixture
def stream():
    return RandomStream(12345)


@pytest.fixture(scope="session")
def sine_model():
    """Matern GP on a smooth 1-D function with eight design points."""
    X = np.linspace(-3, 3, 8)[:, None]
    return gp.fit(X, np.sin(X[:, 0]) + 0.3 * X[:, 0], "matern52", RandomStream(7))


@pytest.fixture(scope="session")
def branch_model():
    from vbagp.learning import initial_doe
    from vbagp.problems import get_problem

    p = get_problem("four_branch")
    X = initial_doe(p, 16, RandomStream(3, 1))
    return gp.fit(X, p.g(X), "matern52", RandomStream(3, 2))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
