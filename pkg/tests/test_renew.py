import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_batch
from streamqif.model import ClusterBatch, ModelSpec
from streamqif.qif import (
    ConvergenceWarning,
    DivergenceError,
    _pinv_C,
    batch_summary,
    fit_offline_qif,
    newton_step,
    qif_covariance,
)
from streamqif.renew import (
    RenewConfig,
    adjusted_score,
    inference_report,
    init_state,
    record_rejection,
    renew_update,
    variance_of,
    wald_report,
)
from streamqif.simulate import SimConfig, gen_batch, make_stream

BETA0 = np.array([0.2, -0.2, 0.2, -0.2, 0.2])
LOGIT5 = ModelSpec("binomial-logit", 5)
GAUSS5 = ModelSpec("gaussian-identity", 5)


def _stream(family, n_b, B, seed):
    return make_stream(SimConfig(family, n_b=n_b, B=B, seed=seed))


def _run(model, batches, config=None):
    st_ = init_state(model, batches[0], config)
    states = [st_]
    for b in batches[1:]:
        st_ = renew_update(st_, b)
        states.append(st_)
    return states


def test_init_zero_noise():
    b = gen_batch(SimConfig("gaussian", n_b=40, B=1), 1)
    b = ClusterBatch(b.X @ BETA0, b.X, b.sizes)
    st_ = init_state(GAUSS5, b)
    np.testing.assert_allclose(st_.beta, BETA0, rtol=0, atol=1e-14)
    assert np.abs(st_.g).max() <= 1e-12


def test_init_equals_offline_fit():
    b = gen_batch(SimConfig("binomial", n_b=100, B=1, seed=3), 1)
    st_ = init_state(LOGIT5, b)
    fit = fit_offline_qif(LOGIT5, b)
    assert np.array_equal(st_.beta, fit.beta_hat)
    assert np.array_equal(st_.g, fit.summary.g)
    assert np.array_equal(st_.G, fit.summary.G)
    assert np.array_equal(st_.C, fit.summary.C)
    assert st_.N == st_.n1 == 100 and st_.b == 1 and st_.reference is b
    ase_state = np.sqrt(np.diag(variance_of(st_)))
    ase_fit = np.sqrt(np.diag(qif_covariance(fit.summary)))
    np.testing.assert_allclose(ase_state, ase_fit, rtol=0, atol=1e-10)


def test_init_rejects_empty_and_warns_small():
    with pytest.raises(ValueError):
        init_state(GAUSS5, ClusterBatch.empty(5))
    rng = np.random.default_rng(0)
    with pytest.warns(UserWarning, match="clusters for p"):
        init_state(ModelSpec("gaussian-identity", 3), random_batch(rng, 2, 3))


def test_empty_batch_only_advances_b():
    batches = _stream("binomial", 50, 2, 1)
    st_ = init_state(LOGIT5, batches[0])
    nxt = renew_update(st_, ClusterBatch.empty(5))
    assert nxt.b == st_.b + 1 and nxt.N == st_.N
    for f in ("beta", "g", "G", "C"):
        assert np.array_equal(getattr(nxt, f), getattr(st_, f))
    assert nxt.floor == st_.floor and nxt.batches_rejected == 0


def test_linear_adjusted_score_is_pooled_score():
    rng = np.random.default_rng(21)
    batches = _stream("gaussian", 60, 2, 21)
    st1 = init_state(GAUSS5, batches[0])
    for _ in range(20):
        beta = rng.standard_normal(5)
        pooled = batch_summary(GAUSS5, batches[0], beta).g + batch_summary(GAUSS5, batches[1], beta).g
        got = adjusted_score(st1, batches[1], beta)
        assert np.linalg.norm(got - pooled) <= 1e-10 * np.linalg.norm(pooled)


def test_logistic_stream_matches_offline():
    batches = _stream("binomial", 100, 100, 5)
    final = _run(LOGIT5, batches)[-1]
    fit = fit_offline_qif(LOGIT5, ClusterBatch.concat(batches))
    ase = np.sqrt(np.diag(variance_of(final)))
    assert np.all(np.abs(final.beta - fit.beta_hat) <= 0.1 * ase)
    assert final.N == 10_000 and final.b == 100


def test_variance_single_batch_independence_is_sandwich():
    rng = np.random.default_rng(22)
    model = ModelSpec("gaussian-identity", 3, "independence")
    batch = random_batch(rng, 80, 3, beta=[1.0, 0.5, -0.5])
    st_ = init_state(model, batch)
    X = batch.X
    e = batch.y - X @ st_.beta
    meat = sum(np.outer(Xi.T @ ei, Xi.T @ ei) for (yi, Xi), ei in
               zip(batch.clusters, np.split(e, np.cumsum(batch.sizes)[:-1])))
    bread = np.linalg.inv(X.T @ X)
    np.testing.assert_allclose(variance_of(st_), bread @ meat @ bread, rtol=1e-8, atol=0)


def test_variance_symmetric():
    st_ = _run(LOGIT5, _stream("binomial", 100, 5, 7))[-1]
    V = variance_of(st_)
    assert np.abs(V - V.T).max() <= 1e-12 * np.abs(V).max()
    assert np.linalg.eigvalsh(V)[0] > 0


def test_se_scales_with_inverse_sqrt_n():
    ratios = []
    for rep in range(100):
        batches = _stream("gaussian", 1000, 4, 1000 + rep)
        states = _run(GAUSS5, batches)
        se1 = np.sqrt(np.diag(variance_of(states[0])))
        se4 = np.sqrt(np.diag(variance_of(states[-1])))
        ratios.append(np.mean(se4 / se1))
    assert 0.45 <= np.mean(ratios) <= 0.55


def test_wald_report_examples():
    r = wald_report([0.0, 1.959964, 50.0], np.eye(3))
    assert r.z[0] == 0 and r.p_value[0] == 1.0
    assert abs(r.p_value[1] - 0.05) <= 1e-6
    assert np.isfinite(r.neglog10_p[2]) and r.p_value[2] == 0.0
    assert abs(r.neglog10_p[2] - 544.0) <= 1.0


def test_wald_zero_se_guard():
    r = wald_report([0.0, 2.0], np.diag([0.0, 0.0]))
    assert list(r.se_zero) == [True, True]
    assert r.p_value[0] == 1.0 and r.p_value[1] == 0.0 and np.isinf(r.neglog10_p[1])


def test_inference_report_counts():
    batches = _stream("binomial", 100, 3, 8)
    st_ = record_rejection(_run(LOGIT5, batches)[-1])
    rep = inference_report(st_)
    assert (rep.N, rep.b, rep.batches_rejected) == (300, 4, 1)
    assert np.all(rep.se > 0) and np.all((rep.p_value > 0) & (rep.p_value <= 1))


@settings(max_examples=10)
@given(st.integers(0, 2**31), st.sampled_from(["gaussian", "binomial"]))
def test_incremental_equation_residual(seed, fam):
    model = GAUSS5 if fam == "gaussian" else LOGIT5
    for s in _run(model, _stream(fam, 50, 6, seed))[1:]:
        assert s.last_converged
        _, _, f, _ = newton_step(s.g, s.G, s.C, s.floor)
        assert np.abs(f).max() <= 1e-6 * max(1.0, np.linalg.norm(s.beta))
        assert np.abs(f).max() <= 1e-5


@settings(max_examples=10)
@given(st.integers(0, 2**31))
def test_recursive_formula_identity(seed):
    batches = _stream("binomial", 100, 5, seed)
    states = _run(LOGIT5, batches)
    for b in range(1, len(states)):
        prev, cur = states[b - 1], states[b]
        P = _pinv_C(cur.C, cur.floor)
        H = cur.G.T @ P @ prev.G / cur.N
        U = cur.G.T @ P @ (prev.g + batch_summary(LOGIT5, batches[b], cur.beta).g)
        lhs = cur.beta - prev.beta
        rhs = np.linalg.solve(H, U) / cur.N
        assert np.linalg.norm(lhs - rhs) <= 1e-6 * np.linalg.norm(lhs)


def test_iteration_counts_settle():
    states = _run(LOGIT5, _stream("binomial", 100, 100, 9))
    its = [s.last_iterations for s in states[1:]]
    assert max(its) <= 10
    half = len(its) // 2
    assert np.median(its[half:]) <= np.median(its[:half])


def test_nonfinite_update_leaves_state_unchanged():
    batches = _stream("gaussian", 50, 2, 10)
    st_ = init_state(GAUSS5, batches[0])
    before = {f: getattr(st_, f).copy() for f in ("beta", "g", "G", "C")}
    bad = ClusterBatch(batches[1].y * 1e300, batches[1].X, batches[1].sizes)
    with np.errstate(all="ignore"), pytest.raises(DivergenceError):
        renew_update(st_, bad)
    for f, v in before.items():
        assert np.array_equal(getattr(st_, f), v)
    assert st_.b == 1


def test_maxit_commits_with_warning():
    batches = _stream("binomial", 100, 2, 11)
    st_ = init_state(LOGIT5, batches[0], RenewConfig(maxit=0))
    with pytest.warns(ConvergenceWarning, match="reached 'maxit'"):
        nxt = renew_update(st_, batches[1])
    assert not nxt.last_converged and nxt.b == 2 and nxt.N == 200


def test_update_rejects_wrong_width():
    batches = _stream("gaussian", 20, 1, 12)
    st_ = init_state(GAUSS5, batches[0])
    with pytest.raises(ValueError):
        renew_update(st_, random_batch(np.random.default_rng(0), 5, 3))


def test_update_signature_takes_only_state_and_batch():
    import inspect

    assert list(inspect.signature(renew_update).parameters) == ["state", "batch"]
