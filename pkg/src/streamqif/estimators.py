"""scikit-learn style estimators over cluster-grouped rows.

``groups`` labels the cluster of each row. Rows of one cluster keep their
input order; clusters are ordered by first appearance.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .driver import process_batch
from .gee import fit_offline_gee, gee_variance, init_gee_state, renew_gee_update
from .model import ClusterBatch, ModelSpec, as_corr, as_family, family_functions
from .qif import fit_offline_qif, qif_covariance
from .renew import RenewConfig, init_state, variance_of, wald_report


def check_groups(X, y, groups, p: int | None = None, batch_id: int = 0) -> ClusterBatch:
    """Validate ``(X, y, groups)`` and pack them into a :class:`ClusterBatch`."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    y = check_array(y, dtype=np.float64, ensure_2d=False)
    if y.ndim != 1:
        raise ValueError(f"y must be 1-D, got shape {y.shape}")
    if groups is None:
        raise ValueError("groups is required: one cluster label per row")
    groups = np.asarray(groups)
    if groups.ndim != 1:
        raise ValueError("groups must be 1-D")
    check_consistent_length(X, y, groups)
    if p is not None and X.shape[1] != p:
        raise ValueError(f"X has {X.shape[1]} features, the model was fitted with {p}")
    _, first, inverse = np.unique(groups, return_index=True, return_inverse=True)
    order_of_label = np.argsort(np.argsort(first))
    cluster = order_of_label[inverse.reshape(-1)]
    rows = np.argsort(cluster, kind="stable")
    sizes = np.bincount(cluster, minlength=first.size)
    return ClusterBatch(y[rows], X[rows], sizes, batch_id)


def _check_family_corr(family, corr):
    return as_family(family), as_corr(corr)


class _WaldMixin:
    def _set_inference(self, beta, cov):
        self.coef_ = np.asarray(beta, dtype=float)
        self.cov_ = cov
        rep = wald_report(self.coef_, cov)
        self.bse_ = rep.se
        self.zvalues_ = rep.z
        self.pvalues_ = rep.p_value

    def predict(self, X):
        """Marginal mean ``h(x' beta)``."""
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        mu, _, _ = family_functions(self.family, X @ self.coef_)
        return mu

    def conf_int(self, level: float = 0.95):
        from scipy.special import ndtri

        check_is_fitted(self, "coef_")
        z = ndtri(0.5 + level / 2.0)
        return np.column_stack([self.coef_ - z * self.bse_, self.coef_ + z * self.bse_])


class QIFRegressor(_WaldMixin, RegressorMixin, BaseEstimator):
    """Offline quadratic inference function fit of a marginal GLM."""

    def __init__(self, family="gaussian-identity", corr="compound-symmetry", tol=1e-6, maxit=50):
        self.family = family
        self.corr = corr
        self.tol = tol
        self.maxit = maxit

    def fit(self, X, y, groups=None):
        fam, corr = _check_family_corr(self.family, self.corr)
        data = check_groups(X, y, groups)
        model = ModelSpec(fam, data.p, corr)
        fit = fit_offline_qif(model, data, tol=self.tol, maxit=self.maxit)
        self.n_features_in_ = data.p
        self.n_clusters_ = data.n
        self.n_iter_ = fit.iterations
        self.converged_ = fit.converged
        self.qif_value_ = fit.Q
        self._set_inference(fit.beta_hat, qif_covariance(fit.summary))
        return self


class GEERegressor(_WaldMixin, RegressorMixin, BaseEstimator):
    """Offline GEE with moment-estimated nuisance parameters and sandwich covariance."""

    def __init__(self, family="gaussian-identity", corr="compound-symmetry", tol=1e-6, maxit=50):
        self.family = family
        self.corr = corr
        self.tol = tol
        self.maxit = maxit

    def fit(self, X, y, groups=None):
        fam, corr = _check_family_corr(self.family, self.corr)
        data = check_groups(X, y, groups)
        model = ModelSpec(fam, data.p, corr)
        fit = fit_offline_gee(model, data, tol=self.tol, maxit=self.maxit)
        self.n_features_in_ = data.p
        self.n_clusters_ = data.n
        self.n_iter_ = fit.iterations
        self.converged_ = fit.converged
        self.alpha_ = fit.nuisance.alpha
        self.phi_ = fit.nuisance.phi
        self._set_inference(fit.beta_hat, fit.cov)
        return self


class RenewableQIFRegressor(_WaldMixin, RegressorMixin, BaseEstimator):
    """Streaming QIF: call :meth:`partial_fit` once per arriving batch.

    The first batch becomes the monitoring reference. With ``monitor=True``
    each later batch is screened and dropped if the goodness-of-fit test
    rejects it at level ``alpha``.
    """

    def __init__(self, family="gaussian-identity", corr="compound-symmetry", alpha=0.05, monitor=True,
                 tol=1e-6, maxit=50):
        self.family = family
        self.corr = corr
        self.alpha = alpha
        self.monitor = monitor
        self.tol = tol
        self.maxit = maxit

    def _reset(self):
        for attr in ("state_", "coef_", "decisions_", "n_features_in_"):
            if hasattr(self, attr):
                delattr(self, attr)

    def partial_fit(self, X, y, groups=None):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        first = not hasattr(self, "state_")
        batch = check_groups(X, y, groups, None if first else self.n_features_in_,
                             batch_id=1 if first else self.state_.b + 1)
        if first:
            fam, corr = _check_family_corr(self.family, self.corr)
            cfg = RenewConfig(tol=self.tol, maxit=self.maxit, alpha=self.alpha, monitor=self.monitor)
            self.state_ = init_state(ModelSpec(fam, batch.p, corr), batch, cfg)
            self.n_features_in_ = batch.p
            self.decisions_ = [None]
        else:
            self.state_, _, _, decision = process_batch(self.state_, batch)
            self.decisions_.append(decision)
        self._set_inference(self.state_.beta, variance_of(self.state_))
        self.n_batches_ = self.state_.b
        self.n_rejected_ = self.state_.batches_rejected
        self.n_clusters_ = self.state_.N
        return self

    def fit(self, X, y, groups=None, batches=None):
        """Fit from scratch, streaming rows in order of their ``batches`` label."""
        self._reset()
        if batches is None:
            return self.partial_fit(X, y, groups)
        X = np.asarray(X)
        y = np.asarray(y)
        groups = np.asarray(groups)
        batches = np.asarray(batches)
        check_consistent_length(X, y, groups, batches)
        _, first = np.unique(batches, return_index=True)
        for start in np.sort(first):
            mask = batches == batches[start]
            self.partial_fit(X[mask], y[mask], groups[mask])
        return self


class RenewableGEERegressor(_WaldMixin, RegressorMixin, BaseEstimator):
    """Streaming GEE with recursively updated nuisance parameters."""

    def __init__(self, family="gaussian-identity", corr="compound-symmetry", tol=1e-6, maxit=50):
        self.family = family
        self.corr = corr
        self.tol = tol
        self.maxit = maxit

    def partial_fit(self, X, y, groups=None):
        first = not hasattr(self, "state_")
        batch = check_groups(X, y, groups, None if first else self.n_features_in_)
        if first:
            fam, corr = _check_family_corr(self.family, self.corr)
            self.state_ = init_gee_state(ModelSpec(fam, batch.p, corr), batch, tol=self.tol, maxit=self.maxit)
            self.n_features_in_ = batch.p
        else:
            self.state_ = renew_gee_update(self.state_, batch)
        self._set_inference(self.state_.beta, gee_variance(self.state_))
        self.alpha_ = self.state_.nuisance.alpha
        self.phi_ = self.state_.nuisance.phi
        self.n_batches_ = self.state_.b
        self.n_clusters_ = self.state_.N
        return self

    def fit(self, X, y, groups=None, batches=None):
        for attr in ("state_", "coef_", "n_features_in_"):
            if hasattr(self, attr):
                delattr(self, attr)
        if batches is None:
            return self.partial_fit(X, y, groups)
        X = np.asarray(X)
        y = np.asarray(y)
        groups = np.asarray(groups)
        batches = np.asarray(batches)
        check_consistent_length(X, y, groups, batches)
        _, first = np.unique(batches, return_index=True)
        for start in np.sort(first):
            mask = batches == batches[start]
            self.partial_fit(X[mask], y[mask], groups[mask])
        return self
