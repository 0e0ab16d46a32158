"""Offline GEE and its renewable counterpart.

The dispersion ``phi`` cancels from both the coefficient updates and the
sandwich covariance, so the working covariance is built without it; the
estimate is still carried for reporting.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .corrbasis import working_correlation
from .model import ClusterBatch, CorrStructure, Family, ModelSpec, family_functions
from .numerics import NotPositiveDefiniteError, cholesky
from .qif import MAXIT_WARNING, ConvergenceWarning, DivergenceError, glm_irls

ALPHA_MARGIN = 1e-4


@dataclass(frozen=True)
class GeeNuisance:
    alpha: float = 0.0
    phi: float = 1.0
    clamped: bool = False


@dataclass(frozen=True)
class ResidMoments:
    sum_r2: float
    sum_pairs: float
    n_obs: int
    n_pairs: int
    m_max: int


@dataclass(frozen=True)
class GeeBatchStats:
    psi: np.ndarray
    S: np.ndarray
    V: np.ndarray
    resid: ResidMoments
    n: int


@dataclass(frozen=True)
class GeeFit:
    beta_hat: np.ndarray
    cov: np.ndarray
    nuisance: GeeNuisance
    S: np.ndarray
    V: np.ndarray
    iterations: int
    converged: bool


@dataclass(frozen=True, eq=False)
class GeeState:
    model: ModelSpec
    beta: np.ndarray
    S: np.ndarray
    V: np.ndarray
    nuisance: GeeNuisance
    N: int
    n_obs: int
    b: int
    tol: float = 1e-6
    maxit: int = 50
    last_iterations: int = 0


def _check_structure(model: ModelSpec):
    if model.corr is CorrStructure.AR1:
        raise ValueError("GEE here supports independence and compound-symmetry working structures")


def _inv_corr(model: ModelSpec, alpha: float, m: int) -> np.ndarray:
    R = working_correlation(model.corr, alpha, m)
    try:
        L = cholesky(R)
    except NotPositiveDefiniteError as exc:
        raise ValueError(f"working correlation R({alpha}) is not positive definite for m={m}") from exc
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


def gee_batch_stats(model: ModelSpec, batch: ClusterBatch, beta, nuisance: GeeNuisance) -> GeeBatchStats:
    """Estimating function, negative gradient, score variance and residual moments."""
    _check_structure(model)
    p = model.p
    beta = np.asarray(beta, dtype=float)
    psi = np.zeros(p)
    S = np.zeros((p, p))
    V = np.zeros((p, p))
    sum_r2 = sum_pairs = 0.0
    n_pairs = 0
    m_max = 0
    for m, _, Y, X in batch.size_groups():
        k = Y.shape[0]
        mu, dmu, v = family_functions(model.family, X @ beta)
        w = 1.0 / np.sqrt(v)
        Dw = (dmu * w)[..., None] * X
        r = w * (Y - mu)
        Rinv = _inv_corr(model, nuisance.alpha, m)
        RDw = np.einsum("ij,kjp->kip", Rinv, Dw)
        psi_i = np.einsum("kmp,km->kp", RDw, r)
        psi += psi_i.sum(axis=0)
        S += Dw.reshape(k * m, p).T @ RDw.reshape(k * m, p)
        V += psi_i.T @ psi_i
        rs = r.sum(axis=1)
        r2 = (r * r).sum(axis=1)
        sum_r2 += float(r2.sum())
        sum_pairs += float(0.5 * (rs * rs - r2).sum())
        n_pairs += k * m * (m - 1) // 2
        m_max = max(m_max, m)
    resid = ResidMoments(sum_r2, sum_pairs, batch.n_obs, n_pairs, m_max)
    return GeeBatchStats(psi, 0.5 * (S + S.T), V, resid, batch.n)


def estimate_nuisance(model: ModelSpec, resid: ResidMoments) -> GeeNuisance:
    """Moment estimates of ``phi`` and the exchangeable ``alpha``."""
    p = model.p
    phi = resid.sum_r2 / max(resid.n_obs - p, 1)
    if model.family is Family.BINOMIAL:
        phi_use = 1.0
    else:
        phi_use = phi
    if model.corr is CorrStructure.INDEPENDENCE or resid.n_pairs == 0 or phi_use <= 0:
        return GeeNuisance(0.0, phi, False)
    alpha = resid.sum_pairs / (phi_use * max(resid.n_pairs - p, 1))
    return _clamp_alpha(alpha, phi, resid.m_max)


def _clamp_alpha(alpha, phi, m_max):
    lo = -1.0 / (m_max - 1) if m_max > 1 else -1.0
    a = min(max(alpha, lo + ALPHA_MARGIN), 1.0 - ALPHA_MARGIN)
    return GeeNuisance(float(a), float(phi), bool(a != alpha))


def sandwich(S, V) -> np.ndarray:
    Sinv = np.linalg.inv(S)
    cov = Sinv @ V @ Sinv.T
    return 0.5 * (cov + cov.T)


def fit_offline_gee(model: ModelSpec, data: ClusterBatch, tol: float = 1e-6, maxit: int = 50,
                    beta_init=None) -> GeeFit:
    _check_structure(model)
    if data.n == 0:
        raise ValueError("cannot fit an empty batch")
    data.validate(model)
    beta = glm_irls(model, data) if beta_init is None else np.array(beta_init, dtype=float)
    nuis = estimate_nuisance(model, gee_batch_stats(model, data, beta, GeeNuisance()).resid)
    converged = False
    it = 0
    while it < maxit:
        st = gee_batch_stats(model, data, beta, nuis)
        step = np.linalg.solve(st.S, st.psi)
        it += 1
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            raise DivergenceError("GEE iterate became non-finite")
        nuis = estimate_nuisance(model, gee_batch_stats(model, data, beta, nuis).resid)
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    if not converged:
        warnings.warn(MAXIT_WARNING, ConvergenceWarning, stacklevel=2)
    st = gee_batch_stats(model, data, beta, nuis)
    return GeeFit(beta, sandwich(st.S, st.V), nuis, st.S, st.V, it, converged)


def init_gee_state(model: ModelSpec, first_batch: ClusterBatch, tol: float = 1e-6, maxit: int = 50) -> GeeState:
    fit = fit_offline_gee(model, first_batch, tol=tol, maxit=maxit)
    return GeeState(model, fit.beta_hat, fit.S, fit.V, fit.nuisance, first_batch.n,
                    first_batch.n_obs, 1, tol, maxit, fit.iterations)


def nuisance_weights(n_obs_prev: int, n_obs_now: int, p: int):
    """Weights ``(w_prev, w_new)`` of the recursive nuisance update; they sum to one."""
    w_prev = (n_obs_prev - p) / (n_obs_now - p)
    return w_prev, 1.0 - w_prev


def renew_gee_update(state: GeeState, batch: ClusterBatch) -> GeeState:
    model = state.model
    if batch.n == 0:
        return replace(state, last_iterations=0)
    batch.validate(model)
    beta_prev, S_prev = state.beta, state.S
    beta = beta_prev.copy()
    converged = False
    it = 0
    while it < state.maxit:
        st = gee_batch_stats(model, batch, beta, state.nuisance)
        psi_t = S_prev @ (beta_prev - beta) + st.psi
        step = np.linalg.solve(S_prev + st.S, psi_t)
        it += 1
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            raise DivergenceError(f"RenewGEE update of batch {batch.batch_id} became non-finite")
        if np.max(np.abs(step)) < state.tol:
            converged = True
            break
    if not converged:
        warnings.warn(MAXIT_WARNING, ConvergenceWarning, stacklevel=2)
    st = gee_batch_stats(model, batch, beta, state.nuisance)
    local = estimate_nuisance(model, st.resid)
    n_obs = state.n_obs + batch.n_obs
    w_prev, w_new = nuisance_weights(state.n_obs, n_obs, model.p)
    m_max = max(st.resid.m_max, 2)
    nuis = _clamp_alpha(w_prev * state.nuisance.alpha + w_new * local.alpha,
                        w_prev * state.nuisance.phi + w_new * local.phi, m_max)
    if model.corr is CorrStructure.INDEPENDENCE:
        nuis = GeeNuisance(0.0, nuis.phi, False)
    return replace(state, beta=beta, S=S_prev + st.S, V=state.V + st.V, nuisance=nuis,
                   N=state.N + batch.n, n_obs=n_obs, b=state.b + 1, last_iterations=it)


def gee_variance(state: GeeState) -> np.ndarray:
    """``(S' V^-1 S)^-1`` from the aggregated matrices."""
    J = state.S.T @ np.linalg.solve(state.V, state.S)
    cov = np.linalg.inv(J)
    return 0.5 * (cov + cov.T)
