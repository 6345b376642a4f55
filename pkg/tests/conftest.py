import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_sparse(rng, rows, cols, sparsity):
    a = rng.standard_normal((rows, cols)).astype(np.float32)
    a[rng.random((rows, cols)) < sparsity] = 0.0
    return a


ACCEPTANCE = pytest.StashKey()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)``; asserts ``ok``."""
    results = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(n, ok, detail):
        results[n] = ("PASS" if ok else "FAIL", detail)
        assert ok, f"criterion {n}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 12):
        status, detail = results.get(n, ("NOT RUN", "test skipped or deselected"))
        terminalreporter.write_line(f"criterion {n:2d}: {status:7s} {detail}")
