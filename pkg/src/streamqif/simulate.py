"""Synthetic correlated-cluster streams with optional abnormal batches.

Random draws come from a Philox counter-based generator keyed by
``(seed, batch_index)``, so any batch can be regenerated on its own.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, ndtr

from .corrbasis import working_correlation
from .model import ClusterBatch, Family, as_family
from .numerics import cholesky

DEFAULT_BETA0 = (0.2, -0.2, 0.2, -0.2, 0.2)


@dataclass(frozen=True)
class Contamination:
    positions: tuple
    d: float
    coefficient: int = 1


@dataclass(frozen=True)
class SimConfig:
    family: Family = Family.GAUSSIAN
    beta0: tuple = DEFAULT_BETA0
    m: int = 5
    n_b: int = 100
    B: int = 10
    alpha_x: float = 0.5
    alpha_y: float = 0.7
    phi: float = 1.0
    seed: int = 0
    contamination: Contamination | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "family", as_family(self.family))
        object.__setattr__(self, "beta0", tuple(float(b) for b in self.beta0))
        if self.n_b < 1 or self.m < 1 or self.B < 1:
            raise ValueError("m, n_b and B must be positive")
        lo = -1.0 / (self.m - 1) if self.m > 1 else -np.inf
        for name in ("alpha_y",):
            a = getattr(self, name)
            if not lo < a < 1:
                raise ValueError(f"{name}={a} outside ({lo:.4g}, 1) for m={self.m}")
        q = len(self.beta0) - 1
        if q > 1 and not -1.0 / (q - 1) < self.alpha_x < 1:
            raise ValueError(f"alpha_x={self.alpha_x} is not a valid exchangeable correlation")
        if self.contamination is not None:
            bad = [t for t in self.contamination.positions if not 2 <= t <= self.B]
            if bad:
                raise ValueError(f"contamination positions {bad} outside 2..{self.B}")

    @property
    def p(self) -> int:
        return len(self.beta0)

    def beta_for(self, batch_index: int) -> np.ndarray:
        beta = np.array(self.beta0)
        c = self.contamination
        if c is not None and batch_index in c.positions:
            beta[c.coefficient] -= c.d
        return beta


def quarter_positions(B: int) -> tuple:
    """Abnormal positions at a quarter and three quarters of the stream."""
    return (max(2, round(0.25 * B)), max(2, round(0.75 * B)))


def replicate_seed(base_seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(rep)]).generate_state(1, np.uint64)[0])


def _rng(seed: int, batch_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(batch_index)])))


def _covariates(config: SimConfig, rng) -> np.ndarray:
    n, m, q = config.n_b, config.m, config.p - 1
    X = np.ones((n, m, config.p))
    if q:
        Lx = cholesky(working_correlation("compound-symmetry", config.alpha_x, q))
        X[..., 1:] = rng.standard_normal((n, m, q)) @ Lx.T
    return X


def _latent(config: SimConfig, rng) -> np.ndarray:
    Ly = cholesky(working_correlation("compound-symmetry", config.alpha_y, config.m))
    return rng.standard_normal((config.n_b, config.m)) @ Ly.T


def _pack(X, y, batch_index):
    n, m, p = X.shape
    return ClusterBatch(y.reshape(-1), X.reshape(n * m, p), np.full(n, m), batch_index)


def gen_gaussian_batch(config: SimConfig, batch_index: int, beta=None) -> ClusterBatch:
    if config.family is not Family.GAUSSIAN:
        raise ValueError("gen_gaussian_batch needs family gaussian-identity")
    beta = config.beta_for(batch_index) if beta is None else np.asarray(beta, float)
    rng = _rng(config.seed, batch_index)
    X = _covariates(config, rng)
    eps = _latent(config, rng) * np.sqrt(config.phi)
    return _pack(X, X @ beta + eps, batch_index)


def gen_binary_batch(config: SimConfig, batch_index: int, beta=None) -> ClusterBatch:
    """Binary outcomes by thresholding a Gaussian copula at the logistic mean."""
    if config.family is not Family.BINOMIAL:
        raise ValueError("gen_binary_batch needs family binomial-logit")
    beta = config.beta_for(batch_index) if beta is None else np.asarray(beta, float)
    rng = _rng(config.seed, batch_index)
    X = _covariates(config, rng)
    u = ndtr(_latent(config, rng))
    y = (u <= expit(X @ beta)).astype(float)
    return _pack(X, y, batch_index)


def gen_batch(config: SimConfig, batch_index: int, beta=None) -> ClusterBatch:
    if config.family is Family.GAUSSIAN:
        return gen_gaussian_batch(config, batch_index, beta)
    return gen_binary_batch(config, batch_index, beta)


def iter_stream(config: SimConfig):
    """Lazily yield batches ``1..B``."""
    for b in range(1, config.B + 1):
        yield gen_batch(config, b)


def make_stream(config: SimConfig) -> list:
    return list(iter_stream(config))


def with_seed(config: SimConfig, seed: int) -> SimConfig:
    return replace(config, seed=seed)
