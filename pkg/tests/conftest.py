import numpy as np
import pytest

from trajqr.model import FixedBandwidth, ModelConfig
from trajqr.simgen import SimScenario, generate


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte-Carlo checks")


@pytest.fixture(scope="session")
def case1_sim():
    return generate(SimScenario("case1", 500, seed=11))


@pytest.fixture(scope="session")
def case1_small():
    return generate(SimScenario("case1", 120, seed=5))


@pytest.fixture
def cfg():
    return ModelConfig(tau_grid=(0.5,), bandwidth=FixedBandwidth(0.8), seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        terminalreporter.write_line(results[num])
