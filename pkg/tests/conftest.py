import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cantorlab.geometry import CantorGeometry

settings.register_profile("ci", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture(scope="session")
def geom1():
    return CantorGeometry(1)


@pytest.fixture(scope="session")
def geom2():
    return CantorGeometry(2)


@pytest.fixture(scope="session")
def geom3():
    return CantorGeometry(3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = sorted(config.acceptance_lines)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
