import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from avgnns.metrics import MetricDescriptor, PointSet

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile(
    "thorough", deadline=None, max_examples=1000, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def line(values, p=1.0):
    """1-d point set in l_p."""
    return PointSet(np.asarray(values, dtype=float)[:, None], MetricDescriptor.lp(p))


def sym_cloud(rng, n, side, scale=1.0):
    A = rng.normal(size=(n, side, side))
    return (0.5 * (A + A.transpose(0, 2, 1)) * scale).reshape(n, side * side)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request, capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    log = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def emit(number: int, status: str, detail: str):
        text = f"criterion {number:>2}: {status:<6} {detail}"
        log.append(text)
        with capsys.disabled():
            print(f"\n{text}")

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for text in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(text)
