import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from radgraph import build_bundle_grid

settings.register_profile(
    "radgraph", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("radgraph")

_ACCEPTANCE_LINES = []


def record_acceptance(line: str):
    """Collect a PASS/FAIL line for the terminal summary."""
    print(line)
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def circle64():
    return build_bundle_grid(0, 1, fiber_res=64)


@pytest.fixture(scope="session")
def sphere16():
    return build_bundle_grid(0, 2, fiber_res=16)


@pytest.fixture(scope="session")
def bundle11():
    return build_bundle_grid(1, 1, base_res=16, fiber_res=32)


@pytest.fixture(scope="session")
def bundle12():
    return build_bundle_grid(1, 2, base_res=8, fiber_res=8)


@pytest.fixture(scope="session")
def bundle21():
    return build_bundle_grid(2, 1, base_res=8, fiber_res=16)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
