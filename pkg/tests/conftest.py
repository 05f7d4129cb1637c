"""Shared grids and states."""
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sclab.grid import SpatialGrid, coherent_state

settings.register_profile("sclab", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("sclab")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def line():
    """256 nodes on [-8, 8)."""
    return SpatialGrid.uniform(-8.0, 8.0, 256)


@pytest.fixture(scope="session")
def fine_line():
    return SpatialGrid.uniform(-8.0, 8.0, 512)


@pytest.fixture(scope="session")
def plane():
    """64 x 64 nodes on [-4, 4)^2, second axis offset off the diagonal."""
    from sclab.grid import Axis
    h = 8.0 / 64
    return SpatialGrid((Axis(-4.0, 4.0, 64), Axis(-4.0 + h / 4, 4.0 + h / 4, 64)))


@pytest.fixture
def packet(line):
    return coherent_state(line, 0.1, [0.3], [-0.4])


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_collection_modifyitems(config, items):
    # acceptance last, so the Husimi floor covers every field the suite produced
    items.sort(key=lambda item: item.path.name == "test_acceptance.py")


@pytest.fixture
def acceptance_log(request):
    return request.config.stash[ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
