import numpy as np
import pytest
from sklearn.base import clone

from rbsde.exceptions import InputError, NumericalError
from rbsde.regression import (
    IndicatorBasis,
    LeastSquaresRegressor,
    PolynomialBasis,
    Projector,
    regress,
)


@pytest.fixture
def features():
    return np.random.default_rng(0).standard_normal((5000, 2))


def test_constant_target_exact(features):
    fit = regress(features, np.full(5000, 3.25))
    assert np.all(fit.predict(features) == pytest.approx(3.25, abs=1e-13))


def test_linear_target_in_span(features):
    y = 1.0 + 2.0 * features[:, 0] - 0.5 * features[:, 1]
    fit = regress(features, y, degree=2)
    assert fit.residual_ <= 1e-10
    np.testing.assert_allclose(fit.predict(features[:10]), y[:10], atol=1e-10)


def test_best_linear_fit_matches_normal_equations():
    x = np.random.default_rng(1).uniform(-1, 1, (4000, 1))
    y = x[:, 0] ** 2
    fit = regress(x, y, degree=1)
    design = np.column_stack([np.ones(len(x)), x[:, 0]])
    coef = np.linalg.solve(design.T @ design, design.T @ y)
    ref = design @ coef
    np.testing.assert_allclose(fit.predict(x), ref, atol=1e-9)
    assert fit.residual_ == pytest.approx(np.linalg.norm(y - ref) / np.linalg.norm(y), rel=1e-8)


def test_too_few_samples_rejected(features):
    with pytest.raises(InputError):
        Projector(PolynomialBasis(2), features[:50])


def test_degenerate_feature_dropped():
    x = np.column_stack([np.random.default_rng(2).standard_normal(500), np.full(500, 4.0)])
    basis = PolynomialBasis(2).fit(x)
    assert basis.transform(x).shape[1] == 3  # 1, z, z^2
    constant_state = np.zeros((200, 1))
    proj = Projector(PolynomialBasis(2), constant_state)
    assert proj.design.shape[1] == 1


def test_rank_deficiency_is_numerical_error(monkeypatch):
    x = np.random.default_rng(3).standard_normal((500, 1))
    monkeypatch.setattr(PolynomialBasis, "transform", lambda self, X: np.column_stack([np.ones(len(X))] * 2))
    monkeypatch.setattr(PolynomialBasis, "penalized_columns", property(lambda self: np.zeros(2, dtype=bool)))
    with pytest.raises(NumericalError):
        Projector(PolynomialBasis(1), x)


def test_indicator_basis_is_binwise_mean():
    x = np.random.default_rng(4).uniform(0, 1, (3200, 1))
    y = np.floor(x[:, 0] * 4)
    fit = regress(x, y, basis="bins", bins=4)
    edges = fit._projector.basis.edges_
    idx = np.searchsorted(edges, x[:, 0], side="right")
    means = np.array([y[idx == b].mean() for b in range(edges.size + 1)])
    np.testing.assert_allclose(fit.predict(x), means[idx], atol=1e-9)
    with pytest.raises(InputError):
        IndicatorBasis(4).fit(np.zeros((100, 2)))


def test_multi_target_shapes(features):
    proj = Projector(PolynomialBasis(2), features)
    targets = np.random.default_rng(5).standard_normal((5000, 3, 2))
    assert proj.fitted(targets).shape == (5000, 3, 2)
    np.testing.assert_allclose(proj.fitted(targets)[:, 1, 0], proj.fitted(targets[:, 1, 0]))


def test_estimator_api(features):
    est = LeastSquaresRegressor(degree=3)
    assert est.get_params()["degree"] == 3
    twin = clone(est).set_params(degree=1)
    y = features[:, 0]
    assert twin.fit(features, y).score(features, y) == pytest.approx(1.0)
