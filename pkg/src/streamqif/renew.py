"""Renewable QIF: the state carried between batches and its Newton renewal."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .model import ClusterBatch, ModelSpec
from .numerics import normal_two_sided_neglog10_p, normal_two_sided_p, pseudo_inverse
from .qif import (
    MAXIT_WARNING,
    ConvergenceWarning,
    DivergenceError,
    _pinv_C,
    batch_summary,
    fit_offline_qif,
    glm_irls,
    is_converged,
    newton_step,
    require_finite,
)


@dataclass(frozen=True)
class RenewConfig:
    tol: float = 1e-6
    maxit: int = 50
    alpha: float = 0.05
    monitor: bool = True
    score_tol: float | None = 1e-6


@dataclass(frozen=True, eq=False)
class RenewState:
    """Everything carried from one batch to the next.

    ``g``, ``G`` and ``C`` are the adjusted score, aggregated negative gradient
    and aggregated score variance at ``beta``. ``reference`` is the retained
    raw reference batch used only by the monitor.
    """

    model: ModelSpec
    beta: np.ndarray
    g: np.ndarray
    G: np.ndarray
    C: np.ndarray
    floor: float
    N: int
    b: int
    n1: int
    batches_rejected: int = 0
    reference: ClusterBatch | None = None
    config: RenewConfig = field(default_factory=RenewConfig)
    last_iterations: int = 0
    last_converged: bool = True


@dataclass(frozen=True)
class InferenceReport:
    estimate: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p_value: np.ndarray
    neglog10_p: np.ndarray
    se_zero: np.ndarray
    N: int
    b: int
    batches_rejected: int


def init_state(model: ModelSpec, first_batch: ClusterBatch, config: RenewConfig | None = None) -> RenewState:
    config = config or RenewConfig()
    if first_batch.n == 0:
        raise ValueError("the first batch must contain at least one cluster")
    first_batch.validate(model)
    if first_batch.n < model.p:
        warnings.warn(f"first batch has {first_batch.n} clusters for p={model.p}", stacklevel=2)
    start = glm_irls(model, first_batch)
    fit = fit_offline_qif(model, first_batch, start, tol=config.tol, maxit=config.maxit,
                          score_tol=config.score_tol)
    s = fit.summary
    return RenewState(
        model=model, beta=fit.beta_hat, g=s.g, G=s.G, C=s.C, floor=s.floor,
        N=first_batch.n, b=1, n1=first_batch.n, reference=first_batch, config=config,
        last_iterations=fit.iterations, last_converged=fit.converged,
    )


def renew_update(state: RenewState, batch: ClusterBatch) -> RenewState:
    """Renew the estimate with one batch using only the carried summaries.

    Newton steps run until the iterate passes both the decrement test and
    the score test; that iterate is committed with the summaries evaluated
    at it, so the stored triple is consistent without an extra pass.
    Returns a new state; the input state is never modified.
    """
    model, cfg = state.model, state.config
    if batch.n == 0:
        return replace(state, b=state.b + 1, last_iterations=0, last_converged=True)
    batch.validate(model)
    beta_prev, g_prev, G_prev, C_prev = state.beta, state.g, state.G, state.C
    beta = beta_prev.copy()
    converged = False
    it = 0
    while True:
        with np.errstate(over="ignore", invalid="ignore"):
            s = require_finite(batch_summary(model, batch, beta),
                               f"renewal of batch {batch.batch_id} produced non-finite summaries")
        g_t = g_prev + G_prev @ (beta_prev - beta) + s.g
        G_t = G_prev + s.G
        step, dec, f, _ = newton_step(g_t, G_t, C_prev + s.C, state.floor + s.floor)
        if not np.isfinite(dec):
            raise DivergenceError(f"renewal of batch {batch.batch_id} produced a non-finite iterate")
        if is_converged(dec, f, beta, cfg.tol, cfg.score_tol):
            converged = True
            break
        if it >= cfg.maxit:
            break
        beta = beta + step
        it += 1
        if not np.all(np.isfinite(beta)):
            raise DivergenceError(f"renewal of batch {batch.batch_id} produced a non-finite iterate")
    if not converged:
        warnings.warn(MAXIT_WARNING, ConvergenceWarning, stacklevel=2)
    return replace(
        state,
        beta=beta,
        g=g_t,
        G=G_t,
        C=C_prev + s.C,
        floor=state.floor + s.floor,
        N=state.N + batch.n,
        b=state.b + 1,
        last_iterations=it,
        last_converged=converged,
    )


def adjusted_score(state: RenewState, batch: ClusterBatch, beta) -> np.ndarray:
    """The renewal's adjusted extended score as a function of ``beta``."""
    beta = np.asarray(beta, dtype=float)
    return state.g + state.G @ (state.beta - beta) + batch_summary(state.model, batch, beta).g


def record_rejection(state: RenewState) -> RenewState:
    """Advance the counters for a batch the monitor refused."""
    return replace(state, b=state.b + 1, batches_rejected=state.batches_rejected + 1,
                   last_iterations=0, last_converged=True)


def variance_of(state: RenewState) -> np.ndarray:
    """Online covariance ``(G' C^+ G)^+`` of the renewable estimate."""
    J = state.G.T @ _pinv_C(state.C, state.floor) @ state.G
    V = pseudo_inverse(J).pinv
    return 0.5 * (V + V.T)


def wald_report(beta, cov, N: int = 0, b: int = 0, batches_rejected: int = 0) -> InferenceReport:
    beta = np.asarray(beta, dtype=float)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    se_zero = se <= 0.0
    z = np.zeros_like(beta)
    p = np.ones_like(beta)
    nl = np.zeros_like(beta)
    for k in range(beta.size):
        if se_zero[k]:
            z[k] = 0.0 if beta[k] == 0 else np.copysign(np.inf, beta[k])
            p[k] = 1.0 if beta[k] == 0 else 0.0
            nl[k] = 0.0 if beta[k] == 0 else np.inf
        else:
            z[k] = beta[k] / se[k]
            p[k] = normal_two_sided_p(z[k])
            nl[k] = normal_two_sided_neglog10_p(z[k])
    return InferenceReport(beta.copy(), se, z, p, nl, se_zero, N, b, batches_rejected)


def inference_report(state: RenewState) -> InferenceReport:
    return wald_report(state.beta, variance_of(state), state.N, state.b, state.batches_rejected)
