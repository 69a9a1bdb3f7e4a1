import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def seasonal_series(length=600, period=12, slope=0.0, noise=0.0, seed=0, channels=1):
    t = np.arange(length, dtype=float)
    cols = []
    r = np.random.default_rng(seed)
    for c in range(channels):
        cols.append(slope * t + np.sin(2 * np.pi * t / period + c) + noise * r.normal(size=length))
    return np.stack(cols, axis=1)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
