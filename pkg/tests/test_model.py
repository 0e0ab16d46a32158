import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from streamqif.model import PROB_EPS, ClusterBatch, ModelSpec, cluster_moments, family_functions


def test_basis_count():
    assert ModelSpec("gaussian-identity", 2, "independence").basis_count == 1
    assert ModelSpec("gaussian-identity", 2, "compound-symmetry").basis_count == 2
    assert ModelSpec("binomial-logit", 2, "ar1").basis_count == 2


def test_p_must_be_positive():
    with pytest.raises(ValueError):
        ModelSpec("gaussian-identity", 0)


def test_family_logit_at_zero():
    mu, d, v = family_functions("binomial-logit", 0.0)
    assert (mu, d, v) == (0.5, 0.25, 0.25)


def test_family_identity():
    mu, d, v = family_functions("gaussian-identity", 3.7)
    assert (mu, d, v) == (3.7, 1.0, 1.0)


def test_family_logit_saturation():
    mu, d, v = family_functions("binomial-logit", 40.0)
    assert mu == 1.0 - PROB_EPS
    assert 0.0 < d < 1e-11 and 0.0 < v < 1e-11
    mu, _, v = family_functions("binomial-logit", -800.0)
    assert mu == PROB_EPS and np.isfinite(1 / math.sqrt(v))


def test_moments_identity_at_zero():
    m = ModelSpec("gaussian-identity", 1)
    cm = cluster_moments(m, [[1.0], [2.0]], [0.0])
    assert np.array_equal(cm.mu, [0.0, 0.0])
    assert np.array_equal(cm.D, [[1.0], [2.0]])
    assert np.array_equal(cm.a_inv_sqrt, [1.0, 1.0])


def test_moments_logit_at_zero():
    m = ModelSpec("binomial-logit", 2)
    cm = cluster_moments(m, [[1.0, 0.0]], [0.0, 0.0])
    assert np.array_equal(cm.mu, [0.5])
    assert np.array_equal(cm.D, [[0.25, 0.0]])
    assert np.array_equal(cm.a_inv_sqrt, [2.0])


def test_moments_logit_ln3():
    m = ModelSpec("binomial-logit", 1)
    cm = cluster_moments(m, np.ones((3, 1)), [math.log(3.0)])
    np.testing.assert_allclose(cm.mu, [0.75] * 3, rtol=1e-15)
    np.testing.assert_allclose(cm.D[:, 0], [0.1875] * 3, rtol=1e-14)


def test_moments_dimension_errors():
    m = ModelSpec("gaussian-identity", 2)
    with pytest.raises(ValueError):
        cluster_moments(m, np.ones((3, 3)), [0.0, 0.0])
    with pytest.raises(ValueError):
        cluster_moments(m, np.ones((3, 2)), [0.0])


def test_dmu_matches_finite_difference():
    rng = np.random.default_rng(3)
    h = 1e-6
    for eta in rng.uniform(-10, 10, size=100):
        _, d, _ = family_functions("binomial-logit", eta)
        fd = (family_functions("binomial-logit", eta + h)[0] - family_functions("binomial-logit", eta - h)[0]) / (2 * h)
        assert abs(fd - d) <= 1e-6 * abs(d)


@given(st.floats(-30, 30))
def test_logit_symmetry(eta):
    assert abs(family_functions("binomial-logit", -eta)[0] - (1 - family_functions("binomial-logit", eta)[0])) <= 1e-15


@given(st.integers(1, 6), st.integers(1, 6), st.sampled_from(["gaussian-identity", "binomial-logit"]),
       st.integers(0, 2**32 - 1))
def test_moments_of_stacked_clusters(m1, m2, family, seed):
    rng = np.random.default_rng(seed)
    model = ModelSpec(family, 3)
    X1, X2 = rng.standard_normal((m1, 3)), rng.standard_normal((m2, 3))
    beta = rng.standard_normal(3)
    a, b = cluster_moments(model, X1, beta), cluster_moments(model, X2, beta)
    s = cluster_moments(model, np.vstack([X1, X2]), beta)
    assert np.array_equal(s.mu, np.concatenate([a.mu, b.mu]))
    assert np.array_equal(s.D, np.vstack([a.D, b.D]))
    assert np.array_equal(s.a_inv_sqrt, np.concatenate([a.a_inv_sqrt, b.a_inv_sqrt]))


def test_cluster_batch_validation():
    with pytest.raises(ValueError):
        ClusterBatch([1.0, 2.0], [[1.0], [2.0]], [1, 2])
    with pytest.raises(ValueError):
        ClusterBatch([1.0], [[1.0]], [0, 1])
    b = ClusterBatch([1.0, 0.5], [[1.0], [1.0]], [2])
    with pytest.raises(ValueError):
        b.validate(ModelSpec("binomial-logit", 1))
    with pytest.raises(ValueError):
        b.validate(ModelSpec("gaussian-identity", 2))


def test_cluster_batch_from_clusters_roundtrip():
    clusters = [([1.0, 2.0], [[1.0, 0.0], [1.0, 1.0]]), ([3.0], [[1.0, 2.0]])]
    b = ClusterBatch.from_clusters(clusters, batch_id=4)
    assert b.n == 2 and b.p == 2 and b.n_obs == 3 and b.batch_id == 4
    got = b.clusters
    assert np.array_equal(got[0][0], [1.0, 2.0]) and np.array_equal(got[1][1], [[1.0, 2.0]])
    assert ClusterBatch.from_clusters([], p=3).n == 0
