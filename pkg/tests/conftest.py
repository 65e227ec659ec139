import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from statecap import bsc, build_state_channel

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def bsc_pair():
    """Good state BSC(0.11) and bad state BSC(0.3)."""
    return build_state_channel([bsc(0.11), bsc(0.3)])


@pytest.fixture(scope="session")
def bsc_pair_low_first():
    """Same family with the low-capacity state as state 0."""
    return build_state_channel([bsc(0.3), bsc(0.11)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def h2(p):
    return 0.0 if p in (0.0, 1.0) else -p * np.log2(p) - (1 - p) * np.log2(1 - p)


def bsc_dispersion(p):
    return p * (1 - p) * np.log2((1 - p) / p) ** 2


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[num])
