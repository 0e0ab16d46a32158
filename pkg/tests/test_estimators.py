import numpy as np
import pytest
from sklearn.base import clone

from streamqif.estimators import (
    GEERegressor,
    QIFRegressor,
    RenewableGEERegressor,
    RenewableQIFRegressor,
    check_groups,
)
from streamqif.model import ModelSpec
from streamqif.qif import fit_offline_qif
from streamqif.renew import init_state, renew_update
from streamqif.simulate import Contamination, SimConfig, make_stream


def _frame(batches):
    X = np.vstack([b.X for b in batches])
    y = np.concatenate([b.y for b in batches])
    groups = np.concatenate([k * 10_000 + np.repeat(np.arange(b.n), b.sizes) for k, b in enumerate(batches)])
    labels = np.concatenate([np.full(b.n_obs, k) for k, b in enumerate(batches)])
    return X, y, groups, labels


def test_check_groups_orders_by_first_appearance():
    X = np.arange(10, dtype=float).reshape(5, 2)
    b = check_groups(X, [0, 1, 2, 3, 4], ["b", "a", "b", "c", "a"])
    assert list(b.sizes) == [2, 2, 1]
    assert list(b.y) == [0, 2, 1, 4, 3]
    with pytest.raises(ValueError):
        check_groups(X, [0, 1, 2, 3, 4], None)
    with pytest.raises(ValueError):
        check_groups(X, [0, 1, 2], [0, 0, 1])


@pytest.mark.parametrize("cls", [QIFRegressor, GEERegressor, RenewableQIFRegressor, RenewableGEERegressor])
def test_params_and_clone(cls):
    est = cls(family="binomial-logit", corr="independence")
    params = est.get_params()
    assert params["family"] == "binomial-logit" and params["corr"] == "independence"
    c = clone(est)
    assert c.get_params() == params and c is not est


def test_qif_regressor_matches_function():
    b = make_stream(SimConfig("binomial", n_b=100, B=1, seed=80))[0]
    X, y, g, _ = _frame([b])
    est = QIFRegressor(family="binomial").fit(X, y, g)
    fit = fit_offline_qif(ModelSpec("binomial-logit", 5), b)
    assert est.coef_.tobytes() == fit.beta_hat.tobytes()
    assert est.pvalues_.shape == (5,) and est.converged_
    pred = est.predict(X)
    assert pred.shape == y.shape and np.all((pred > 0) & (pred < 1))
    ci = est.conf_int()
    assert np.all(ci[:, 0] < est.coef_) and np.all(est.coef_ < ci[:, 1])


def test_gee_regressor():
    b = make_stream(SimConfig("gaussian", n_b=200, B=1, seed=81))[0]
    X, y, g, _ = _frame([b])
    est = GEERegressor().fit(X, y, g)
    assert np.abs(est.coef_ - [0.2, -0.2, 0.2, -0.2, 0.2]).max() < 0.2
    assert 0.5 < est.alpha_ < 0.9
    assert est.score(X, y, ) > 0


def test_renewable_partial_fit_matches_state_machine():
    batches = make_stream(SimConfig("binomial", n_b=60, B=4, seed=82))
    est = RenewableQIFRegressor(family="binomial", monitor=False)
    for b in batches:
        X, y, g, _ = _frame([b])
        est.partial_fit(X, y, g)
    st_ = init_state(ModelSpec("binomial-logit", 5), batches[0])
    for b in batches[1:]:
        st_ = renew_update(st_, b)
    assert est.coef_.tobytes() == st_.beta.tobytes()
    assert est.n_batches_ == 4 and est.n_clusters_ == 240


def test_renewable_fit_with_batches_and_monitor():
    cfg = SimConfig("binomial", n_b=100, B=4, seed=83, contamination=Contamination((3,), 1.5))
    X, y, g, labels = _frame(make_stream(cfg))
    est = RenewableQIFRegressor(family="binomial").fit(X, y, g, batches=labels)
    assert est.n_rejected_ == 1 and est.decisions_[2].reject
    again = clone(est).fit(X, y, g, batches=labels)
    assert again.coef_.tobytes() == est.coef_.tobytes()


def test_renewable_gee():
    X, y, g, labels = _frame(make_stream(SimConfig("gaussian", n_b=100, B=3, seed=84)))
    est = RenewableGEERegressor().fit(X, y, g, batches=labels)
    assert est.n_batches_ == 3 and est.n_clusters_ == 300
    with pytest.raises(ValueError):
        est.partial_fit(X[:, :3], y, g)


def test_invalid_alpha():
    X, y, g, _ = _frame(make_stream(SimConfig("gaussian", n_b=10, B=1))[:1])
    with pytest.raises(ValueError):
        RenewableQIFRegressor(alpha=1.5).partial_fit(X, y, g)
