"""Marginal GLM families and the cluster data containers."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit

PROB_EPS = 1e-12


class Family(str, Enum):
    GAUSSIAN = "gaussian-identity"
    BINOMIAL = "binomial-logit"


class CorrStructure(str, Enum):
    INDEPENDENCE = "independence"
    COMPOUND_SYMMETRY = "compound-symmetry"
    AR1 = "ar1"


_FAMILY_ALIASES = {"gaussian": Family.GAUSSIAN, "binomial": Family.BINOMIAL, "logistic": Family.BINOMIAL}
_CORR_ALIASES = {"exchangeable": CorrStructure.COMPOUND_SYMMETRY, "cs": CorrStructure.COMPOUND_SYMMETRY}


def as_family(value) -> Family:
    if isinstance(value, Family):
        return value
    return _FAMILY_ALIASES.get(value) or Family(value)


def as_corr(value) -> CorrStructure:
    if isinstance(value, CorrStructure):
        return value
    return _CORR_ALIASES.get(value) or CorrStructure(value)


@dataclass(frozen=True)
class ModelSpec:
    family: Family
    p: int
    corr: CorrStructure = CorrStructure.COMPOUND_SYMMETRY

    def __post_init__(self):
        object.__setattr__(self, "family", as_family(self.family))
        object.__setattr__(self, "corr", as_corr(self.corr))
        if int(self.p) < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        object.__setattr__(self, "p", int(self.p))

    @property
    def basis_count(self) -> int:
        return 1 if self.corr is CorrStructure.INDEPENDENCE else 2


def family_functions(family, eta):
    """Return ``(mu, dmu/deta, variance)`` evaluated at the linear predictor."""
    family = as_family(family)
    eta = np.asarray(eta, dtype=float)
    if family is Family.GAUSSIAN:
        one = np.ones_like(eta)
        return eta.copy(), one, one.copy()
    mu = np.clip(expit(eta), PROB_EPS, 1.0 - PROB_EPS)
    v = mu * (1.0 - mu)
    return mu, v, v.copy()


@dataclass(frozen=True)
class ClusterMoments:
    mu: np.ndarray
    D: np.ndarray
    a_inv_sqrt: np.ndarray


def cluster_moments(model: ModelSpec, X, beta) -> ClusterMoments:
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.p:
        raise ValueError(f"X must have shape (m, {model.p}), got {X.shape}")
    if beta.shape != (model.p,):
        raise ValueError(f"beta must have length {model.p}, got shape {beta.shape}")
    # row-wise reduction so each row's result does not depend on its neighbours
    mu, dmu, v = family_functions(model.family, np.sum(X * beta, axis=1))
    return ClusterMoments(mu=mu, D=dmu[:, None] * X, a_inv_sqrt=1.0 / np.sqrt(v))


@dataclass(eq=False)
class ClusterBatch:
    """Clusters stored row-stacked: ``y[i]``/``X[i]`` rows grouped by ``sizes``.

    Use :meth:`from_clusters` to build from per-cluster arrays.
    """

    y: np.ndarray
    X: np.ndarray
    sizes: np.ndarray
    batch_id: int = 0
    _groups: list | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.y = np.ascontiguousarray(self.y, dtype=float).reshape(-1)
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.sizes = np.asarray(self.sizes, dtype=np.int64).reshape(-1)
        if self.X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {self.X.shape}")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"X has {self.X.shape[0]} rows but y has {self.y.shape[0]}")
        if np.any(self.sizes < 1):
            raise ValueError("every cluster needs at least one observation")
        if int(self.sizes.sum()) != self.y.shape[0]:
            raise ValueError(f"cluster sizes sum to {int(self.sizes.sum())}, expected {self.y.shape[0]}")

    @classmethod
    def from_clusters(cls, clusters, batch_id: int = 0, p: int | None = None) -> "ClusterBatch":
        clusters = [(np.atleast_1d(np.asarray(y, float)), np.atleast_2d(np.asarray(X, float))) for y, X in clusters]
        if not clusters:
            if p is None:
                raise ValueError("an empty batch needs an explicit p")
            return cls.empty(p, batch_id)
        ys = [y for y, _ in clusters]
        Xs = [X for _, X in clusters]
        widths = {X.shape[1] for X in Xs}
        if len(widths) != 1 or (p is not None and widths != {p}):
            raise ValueError(f"inconsistent covariate widths {sorted(widths)}")
        return cls(np.concatenate(ys), np.vstack(Xs), [len(y) for y in ys], batch_id)

    @classmethod
    def empty(cls, p: int, batch_id: int = 0) -> "ClusterBatch":
        return cls(np.zeros(0), np.zeros((0, p)), np.zeros(0, dtype=np.int64), batch_id)

    @classmethod
    def concat(cls, batches, batch_id: int = 0) -> "ClusterBatch":
        batches = list(batches)
        return cls(
            np.concatenate([b.y for b in batches]),
            np.vstack([b.X for b in batches]),
            np.concatenate([b.sizes for b in batches]),
            batch_id,
        )

    @property
    def n(self) -> int:
        return int(self.sizes.shape[0])

    @property
    def p(self) -> int:
        return int(self.X.shape[1])

    @property
    def n_obs(self) -> int:
        return int(self.y.shape[0])

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    @property
    def clusters(self):
        off = self.offsets
        return [(self.y[a:b], self.X[a:b]) for a, b in zip(off[:-1], off[1:])]

    def validate(self, model: ModelSpec) -> None:
        if self.p != model.p:
            raise ValueError(f"batch has {self.p} covariate columns, model expects p={model.p}")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.X))):
            raise ValueError("batch contains non-finite values")
        if model.family is Family.BINOMIAL and not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("binomial-logit outcomes must be 0 or 1")

    def size_groups(self):
        """Clusters bucketed by size: list of ``(m, cluster_index, Y[k, m], X[k, m, p])``.

        Buckets are ordered by ``m`` and keep cluster order within a bucket, so
        reductions over them are deterministic.
        """
        if self._groups is None:
            groups = []
            if self.n:
                starts = self.offsets[:-1]
                for m in np.unique(self.sizes):
                    idx = np.flatnonzero(self.sizes == m)
                    rows = (starts[idx][:, None] + np.arange(m)[None, :]).reshape(-1)
                    groups.append((
                        int(m), idx,
                        self.y[rows].reshape(len(idx), m),
                        self.X[rows].reshape(len(idx), m, self.p),
                    ))
            self._groups = groups
        return self._groups
