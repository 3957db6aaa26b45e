import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from smartdtr.designs import adaptr_design, dgp1_design  # noqa: E402
from smartdtr.simulation import Dgp1Config, Dgp2StyleConfig, dgp1_sample, dgp2_style_sample  # noqa: E402


@pytest.fixture(scope="session")
def dgp1():
    return dgp1_design()


@pytest.fixture(scope="session")
def adaptr():
    return adaptr_design()


@pytest.fixture(scope="session")
def dgp1_data():
    """One DGP-1 trial of 1692 participants."""
    return dgp1_sample(Dgp1Config(n=1692, seed=7))


@pytest.fixture(scope="session")
def dgp1_small():
    return dgp1_sample(Dgp1Config(n=400, seed=3))


@pytest.fixture(scope="session")
def adaptr_data():
    return dgp2_style_sample(Dgp2StyleConfig(n=1692, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
