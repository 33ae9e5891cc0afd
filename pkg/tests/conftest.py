import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from weaksia.fields import HorizontalGrid, PhysicalConstants
from weaksia.geometry import build_slab_profile, extrude_mesh

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def consts():
    return PhysicalConstants()


@pytest.fixture(scope="session")
def slab():
    return build_slab_profile()


@pytest.fixture(scope="session")
def slab_grid(slab):
    return HorizontalGrid.from_profile(slab, 80)


@pytest.fixture(scope="session")
def slab_mesh(slab):
    return extrude_mesh(slab, 40, 5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(mod.RESULTS):
            terminalreporter.write_line(mod.RESULTS[k])
