import numpy as np
import pytest

from pqgalerkin.mesh import unit_square_hierarchy

# filled by test_acceptance; printed once at the end of the session
ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def hierarchy():
    return unit_square_hierarchy(5, cells=2)


@pytest.fixture(scope="session")
def small_hierarchy():
    return unit_square_hierarchy(3, cells=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
