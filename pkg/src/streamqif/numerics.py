"""Small dense linear-algebra and distribution kernels.

Every inversion of a score covariance in this package goes through
:func:`pseudo_inverse`, so rank-deficient sample covariances (small early
batches, collinear basis blocks) degrade gracefully instead of raising.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised by :func:`cholesky` with the order of the failing leading minor."""

    def __init__(self, minor: int, pivot: float):
        self.minor = minor
        self.pivot = pivot
        super().__init__(
            f"matrix is not positive definite: leading minor of order {minor} "
            f"has non-positive pivot {pivot:.3g}"
        )


@dataclass(frozen=True)
class PinvResult:
    pinv: np.ndarray
    rank: int
    tolerance_used: float


def pseudo_inverse(A, rtol: float | None = None) -> PinvResult:
    """Moore-Penrose inverse of a symmetric PSD matrix with its numerical rank.

    Eigenvalues at or below ``rtol * max_eigenvalue`` are treated as zero.
    The default ``rtol`` is ``1e-10 * dim``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("pseudo_inverse: matrix has non-finite entries")
    n = A.shape[0]
    if rtol is None:
        rtol = 1e-10 * max(n, 1)
    if n == 0:
        return PinvResult(np.zeros((0, 0)), 0, 0.0)
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    top = w[-1]
    if top <= 0.0:
        return PinvResult(np.zeros_like(A), 0, 0.0)
    tol = rtol * top
    keep = w > tol
    Vk = V[:, keep]
    pinv = (Vk / w[keep]) @ Vk.T
    return PinvResult(pinv, int(keep.sum()), float(tol))


def cholesky(A) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == A``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    # locate the first leading minor whose pivot fails
    n = A.shape[0]
    L = np.zeros_like(A)
    for j in range(n):
        pivot = A[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > 0.0:
            raise NotPositiveDefiniteError(j + 1, float(pivot))
        L[j, j] = math.sqrt(pivot)
        L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    raise NotPositiveDefiniteError(n, float("nan"))  # pragma: no cover


def chi2_cdf(x: float, df: float) -> float:
    """Lower tail ``P(X <= x)`` for ``X ~ chi2(df)``."""
    if x < 0:
        raise ValueError(f"chi2_cdf: x must be >= 0, got {x}")
    if df <= 0:
        raise ValueError(f"chi2_cdf: df must be positive, got {df}")
    return float(special.gammainc(0.5 * df, 0.5 * x))


def chi2_sf(x: float, df: float) -> float:
    """Upper tail ``P(X > x)``; accurate where ``1 - chi2_cdf`` would cancel."""
    if x < 0:
        raise ValueError(f"chi2_sf: x must be >= 0, got {x}")
    if df <= 0:
        raise ValueError(f"chi2_sf: df must be positive, got {df}")
    return float(special.gammaincc(0.5 * df, 0.5 * x))


def _chi2_pdf(x: float, df: float) -> float:
    if x <= 0:
        return 0.0
    k = 0.5 * df
    return math.exp((k - 1) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k))


def chi2_quantile(prob: float, df: float, tol: float = 1e-12) -> float:
    """Inverse of :func:`chi2_cdf` by bracketing and safeguarded Newton steps."""
    if not 0.0 < prob < 1.0:
        raise ValueError(f"chi2_quantile: prob must lie in (0, 1), got {prob}")
    if df <= 0:
        raise ValueError(f"chi2_quantile: df must be positive, got {df}")

    # Wilson-Hilferty starting point
    z = math.sqrt(2.0) * special.erfinv(2.0 * prob - 1.0)
    h = 2.0 / (9.0 * df)
    x = max(df * (1.0 - h + z * math.sqrt(h)) ** 3, 1e-300)

    lo, hi = 0.0, max(x, 1.0)
    while chi2_cdf(hi, df) < prob:
        lo, hi = hi, 2.0 * hi
    if not lo <= x <= hi:
        x = 0.5 * (lo + hi)

    for _ in range(200):
        F = chi2_cdf(x, df)
        err = F - prob
        if abs(err) <= tol:
            break
        if err > 0:
            hi = x
        else:
            lo = x
        f = _chi2_pdf(x, df)
        step = err / f if f > 0 else np.inf
        x_new = x - step
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if x_new == x or hi - lo <= 1e-15 * max(1.0, hi):
            break
        x = x_new
    return float(x)


def normal_two_sided_p(z: float) -> float:
    """``2 * (1 - Phi(|z|))`` evaluated through the upper tail."""
    return float(2.0 * special.ndtr(-abs(z)))


def normal_two_sided_neglog10_p(z: float) -> float:
    """``-log10`` of the two-sided normal p-value, safe far into the tail."""
    return float(-(math.log(2.0) + special.log_ndtr(-abs(z))) / math.log(10.0))
