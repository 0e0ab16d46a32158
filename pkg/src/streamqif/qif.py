"""Extended-score summaries and the offline quadratic inference function fit."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .corrbasis import basis_set
from .model import ClusterBatch, CorrStructure, Family, ModelSpec, family_functions
from .numerics import pseudo_inverse

MAXIT_WARNING = "algorithm reached 'maxit' but did not reach the convergence criteria"

# per-cluster scores below this fraction of their gross terms count as zero
SCORE_FLOOR_RTOL = 1e-9


class ConvergenceWarning(UserWarning):
    pass


class DivergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class BatchSummary:
    """Extended score ``g`` (pS), negative gradient ``G`` (pS x p), variance ``C`` (pS x pS).

    ``floor`` is an absolute eigenvalue floor for ``C`` below which score
    directions are indistinguishable from rounding error.
    """

    g: np.ndarray
    G: np.ndarray
    C: np.ndarray
    n: int
    beta_at: np.ndarray
    floor: float = 0.0

    def __add__(self, other: "BatchSummary") -> "BatchSummary":
        return BatchSummary(
            self.g + other.g, self.G + other.G, self.C + other.C,
            self.n + other.n, self.beta_at, self.floor + other.floor,
        )


@dataclass(frozen=True)
class QifFit:
    beta_hat: np.ndarray
    summary: BatchSummary
    Q: float
    iterations: int
    converged: bool


def cluster_scores(model: ModelSpec, batch: ClusterBatch, beta):
    """Per-cluster stacked scores ``g_i`` (n x pS) plus the summed ``G`` and floor.

    Rows of the score matrix follow the batch's size buckets, not cluster order.
    """
    p, S = model.p, model.basis_count
    beta = np.asarray(beta, dtype=float)
    G = np.zeros((p * S, p))
    blocks = []
    floor = 0.0
    cs = model.corr is CorrStructure.COMPOUND_SYMMETRY
    gaussian = model.family is Family.GAUSSIAN
    for m, _, Y, X in batch.size_groups():
        k = Y.shape[0]
        eta = X @ beta
        if gaussian:
            Dw = X
            a = Y - eta
            gross = np.abs(Y) + np.abs(eta)
        else:
            mu, dmu, v = family_functions(model.family, eta)
            w = 1.0 / np.sqrt(v)
            Dw = (dmu * w)[..., None] * X
            a = w * (Y - mu)
            gross = w * (np.abs(Y) + np.abs(mu))
        Dw2 = Dw.reshape(k * m, p)
        absDw = np.abs(Dw)
        g0 = np.einsum("kmp,km->kp", Dw, a)
        G0 = Dw2.T @ Dw2
        t0 = np.einsum("kmp,km->kp", absDw, gross)
        if S == 1:
            gi = g0
            G += G0
            scale = np.einsum("kp,kp->k", t0, t0)
        else:
            gi = np.zeros((k, p * S))
            gi[:, :p] = g0
            G[:p] += G0
            scale = np.einsum("kp,kp->k", t0, t0)
            if cs:
                # M = J - I, so D' M v = (sum_j D_j) (sum_j v_j) - D' v
                Dsum = Dw.sum(axis=1)
                gi[:, p:] = Dsum * a.sum(axis=1)[:, None] - g0
                G[p:] += Dsum.T @ Dsum - G0
                t1 = absDw.sum(axis=1) * gross.sum(axis=1)[:, None] - t0
                scale += np.einsum("kp,kp->k", t1, t1)
            else:
                for s, M in enumerate(basis_set(model.corr, m).matrices[1:], start=1):
                    MDw = np.einsum("ij,kjp->kip", M, Dw)
                    gi[:, s * p:(s + 1) * p] = np.einsum("kmp,km->kp", MDw, a)
                    G[s * p:(s + 1) * p] += Dw2.T @ MDw.reshape(k * m, p)
                    t1 = np.einsum("kmp,km->kp", absDw, gross @ M)
                    scale += np.einsum("kp,kp->k", t1, t1)
        floor += float((SCORE_FLOOR_RTOL ** 2) * scale.sum())
        blocks.append(gi)
    gmat = np.vstack(blocks) if blocks else np.zeros((0, p * S))
    return gmat, G, floor


def batch_summary(model: ModelSpec, batch: ClusterBatch, beta) -> BatchSummary:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (model.p,):
        raise ValueError(f"beta must have length {model.p}, got shape {beta.shape}")
    if batch.p != model.p:
        raise ValueError(f"batch has {batch.p} covariate columns, model expects p={model.p}")
    gmat, G, floor = cluster_scores(model, batch, beta)
    return BatchSummary(gmat.sum(axis=0), G, gmat.T @ gmat, batch.n, beta.copy(), floor)


def require_finite(summary: BatchSummary, message: str) -> BatchSummary:
    if not (np.all(np.isfinite(summary.g)) and np.all(np.isfinite(summary.G)) and np.all(np.isfinite(summary.C))):
        raise DivergenceError(message)
    return summary


def _pinv_C(C, floor):
    if floor <= 0.0:
        return pseudo_inverse(C).pinv
    # same relative cut as pseudo_inverse, plus the rounding floor
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    keep = w > max(1e-10 * C.shape[0] * w[-1], floor)
    Vk = V[:, keep]
    return (Vk / w[keep]) @ Vk.T


def quadratic_form(g, C, floor: float = 0.0) -> float:
    return max(float(g @ _pinv_C(C, floor) @ g), 0.0)


def qif_objective(summary: BatchSummary) -> float:
    """``Q = g' C^+ g``."""
    return quadratic_form(summary.g, summary.C, summary.floor)


def is_converged(decrement: float, f, beta, tol: float, score_tol: float | None = None) -> bool:
    """Decrement below ``tol``; optionally also ``|f|_inf <= score_tol * max(1, |beta|)``."""
    if not decrement < tol:
        return False
    if score_tol is None:
        return True
    return float(np.max(np.abs(f), initial=0.0)) <= score_tol * max(1.0, float(np.linalg.norm(beta)))


def newton_step(g, G, C, floor: float = 0.0):
    """Gauss-Newton direction for ``G' C^+ g = 0``.

    Returns ``(step, decrement, f, J)`` where ``f = G' C^+ g``,
    ``J = G' C^+ G`` and ``decrement = f' J^+ f``.
    """
    W = G.T @ _pinv_C(C, floor)
    J = W @ G
    f = W @ g
    step = pseudo_inverse(J).pinv @ f
    return step, float(f @ step), f, J


def glm_irls(model: ModelSpec, data: ClusterBatch, tol: float = 1e-10, maxit: int = 50) -> np.ndarray:
    """Independence-working GLM fit on the pooled rows (canonical links)."""
    X, y = data.X, data.y
    if data.n_obs == 0:
        raise ValueError("cannot fit an empty batch")
    if np.linalg.matrix_rank(X) < model.p:
        raise np.linalg.LinAlgError(f"design matrix has rank below p={model.p}")
    if model.family is Family.GAUSSIAN:
        return np.linalg.lstsq(X, y, rcond=None)[0]
    beta = np.zeros(model.p)
    for _ in range(maxit):
        mu, _, v = family_functions(model.family, X @ beta)
        step = np.linalg.solve((X * v[:, None]).T @ X, X.T @ (y - mu))
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            raise DivergenceError("IRLS produced a non-finite iterate")
        if np.max(np.abs(step)) < tol * max(1.0, np.max(np.abs(beta))):
            return beta
    raise DivergenceError(f"IRLS start did not converge in {maxit} iterations (separated data?)")


def fit_offline_qif(model: ModelSpec, data: ClusterBatch, beta_init=None,
                    tol: float = 1e-6, maxit: int = 50, score_tol: float | None = 1e-6) -> QifFit:
    """Minimise the QIF on one data set by Newton steps.

    Stops at the first iterate whose Newton decrement is below ``tol`` and
    whose estimating equation ``G' C^+ g`` is below ``score_tol`` (scaled by
    ``max(1, |beta|)``); the summary returned is evaluated at that iterate.
    """
    data.validate(model)
    if data.n < model.p:
        warnings.warn(f"only {data.n} clusters for p={model.p} coefficients", stacklevel=2)
    elif data.n <= model.p * model.basis_count:
        # with n <= pS cluster scores the objective is flat (Q = rank C everywhere)
        warnings.warn(f"only {data.n} clusters for {model.p * model.basis_count} moment conditions; "
                      "the QIF is degenerate", stacklevel=2)
    beta = glm_irls(model, data) if beta_init is None else np.array(beta_init, dtype=float)
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta_init must be finite")
    converged = False
    it = 0
    while True:
        with np.errstate(over="ignore", invalid="ignore"):
            s = require_finite(batch_summary(model, data, beta),
                               "QIF Newton iterate became non-finite; try a better beta_init")
        step, dec, f, _ = newton_step(s.g, s.G, s.C, s.floor)
        if not np.isfinite(dec):
            raise DivergenceError("QIF Newton iterate became non-finite; try a better beta_init")
        if is_converged(dec, f, beta, tol, score_tol):
            converged = True
            break
        if it >= maxit:
            break
        beta = beta + step
        it += 1
        if not np.all(np.isfinite(beta)):
            raise DivergenceError("QIF Newton iterate became non-finite; try a better beta_init")
    if not converged:
        warnings.warn(MAXIT_WARNING, ConvergenceWarning, stacklevel=2)
    summary = s
    return QifFit(beta, summary, qif_objective(summary), it, converged)


def qif_covariance(summary: BatchSummary) -> np.ndarray:
    """Godambe-form covariance ``(G' C^+ G)^+`` of a QIF estimate."""
    J = summary.G.T @ _pinv_C(summary.C, summary.floor) @ summary.G
    V = pseudo_inverse(J).pinv
    return 0.5 * (V + V.T)
