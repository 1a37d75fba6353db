import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from undersmooth.data import Dataset

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_het_data(rng, n=120, k=6, hetero=True, binary=False):
    """Small heterogeneous-effects dataset with a known sparse truth."""
    if binary:
        X = (rng.random((n, k)) < 0.5).astype(float)
    else:
        X = np.maximum(rng.standard_normal((n, k)), 0.0)
    d = (rng.random(n) < 0.5).astype(float)
    d[:5], d[5:10] = 0.0, 1.0
    scale = 1.0 + X[:, min(2, k - 1)] if hetero else 1.0
    y = 0.5 + X[:, 0] + d * (0.3 + 1.5 * X[:, min(1, k - 1)]) + scale * rng.standard_normal(n)
    return Dataset(y, X, d)


@pytest.fixture
def het_data(rng):
    return make_het_data(rng)
