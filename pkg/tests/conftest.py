import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from streamqif.model import ClusterBatch, ModelSpec

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_batch(rng, n, p, m=5, family="gaussian", beta=None, var_sizes=False, batch_id=0):
    """Small random batch; cluster sizes in 1..m when ``var_sizes``."""
    sizes = rng.integers(1, m + 1, size=n) if var_sizes else np.full(n, m)
    X = rng.standard_normal((int(sizes.sum()), p))
    X[:, 0] = 1.0
    beta = np.zeros(p) if beta is None else np.asarray(beta, float)
    eta = X @ beta
    if family == "gaussian":
        y = eta + rng.standard_normal(eta.size)
    else:
        y = (rng.random(eta.size) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    return ClusterBatch(y, X, sizes, batch_id)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def gauss_model():
    return ModelSpec("gaussian-identity", 3, "compound-symmetry")
