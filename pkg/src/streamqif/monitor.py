"""Goodness-of-fit screen of an incoming batch against the normal reference."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import ClusterBatch, ModelSpec
from .numerics import chi2_quantile, chi2_sf, pseudo_inverse
from .qif import _pinv_C, batch_summary, glm_irls, is_converged


class DegenerateReferenceError(ValueError):
    pass


@dataclass(frozen=True)
class MonitorDecision:
    lambda_: float
    df: int
    p_value: float
    reject: bool
    beta_check: np.ndarray
    alpha_used: float
    critical_value: float = np.nan
    iterations: int = 0
    converged: bool = True
    diverged: bool = False


def _stacked(model, reference, candidate, beta):
    s1 = batch_summary(model, reference, beta)
    sb = batch_summary(model, candidate, beta)
    P1 = _pinv_C(s1.C, s1.floor)
    Pb = _pinv_C(sb.C, sb.floor)
    W1 = s1.G.T @ P1
    Wb = sb.G.T @ Pb
    J = W1 @ s1.G + Wb @ sb.G
    f = W1 @ s1.g + Wb @ sb.g
    lam = max(float(s1.g @ P1 @ s1.g), 0.0) + max(float(sb.g @ Pb @ sb.g), 0.0)
    return s1, sb, J, f, lam


def screen_batch(model: ModelSpec, reference: ClusterBatch, candidate: ClusterBatch,
                 alpha: float = 0.05, beta_init=None, tol: float = 1e-6, maxit: int = 50,
                 score_tol: float | None = None) -> MonitorDecision:
    """Minimise the two-batch QIF with block-diagonal weighting and test its value.

    ``reject`` is true when the statistic reaches the upper ``alpha`` quantile
    of chi-square with ``rank(C_ref) + rank(C_cand) - p`` degrees of freedom.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if reference.n == 0 or candidate.n == 0:
        raise ValueError("screen_batch needs two nonempty batches")
    reference.validate(model)
    candidate.validate(model)
    if beta_init is None:
        beta_init = glm_irls(model, reference)
    beta = np.array(beta_init, dtype=float)

    converged = False
    it = 0
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            while True:
                s1, sb, J, f, lam = _stacked(model, reference, candidate, beta)
                step = pseudo_inverse(J).pinv @ f
                dec = float(f @ step)
                if not np.isfinite(dec):
                    raise FloatingPointError
                if is_converged(dec, f, beta, tol, score_tol):
                    converged = True
                    break
                if it >= maxit:
                    break
                beta = beta + step
                it += 1
                if not np.all(np.isfinite(beta)):
                    raise FloatingPointError
    except (FloatingPointError, np.linalg.LinAlgError, ValueError):
        return MonitorDecision(np.inf, 0, 0.0, True, beta, alpha, np.nan, it, False, True)

    df = pseudo_inverse(s1.C).rank + pseudo_inverse(sb.C).rank - model.p
    if df <= 0:
        raise DegenerateReferenceError(
            f"monitor degrees of freedom {df} <= 0; the reference or candidate score variance is rank deficient"
        )
    crit = chi2_quantile(1.0 - alpha, df)
    return MonitorDecision(lam, int(df), chi2_sf(lam, df), bool(lam >= crit), beta, alpha, crit, it, converged)


def augment_reference(state, *batches):
    """Return ``state`` with its reference widened by further normal batches."""
    ref = ClusterBatch.concat([state.reference, *batches], batch_id=state.reference.batch_id)
    return replace(state, reference=ref)
