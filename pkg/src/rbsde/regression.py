"""Least-squares conditional expectations on the forward state.

The backward solvers approximate ``E[target | X_k]`` by regressing the
per-path targets on a basis of functions of ``X_k``.  Two bases exist:

* :class:`PolynomialBasis` -- all monomials of total degree ``<= degree``
  in the standardized features.  Non-constant columns are centered and
  scaled on the fitting sample, so a constant target is reproduced exactly
  and the small ridge never touches the intercept.
* :class:`IndicatorBasis` -- equal-count bins of a one-dimensional feature.

Both are scikit-learn transformers; :class:`LeastSquaresRegressor` is a
regressor on top of them, and :class:`Projector` keeps one factorization
for many right-hand sides (the solver needs several per time step).
"""
from __future__ import annotations

from itertools import combinations_with_replacement

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InputError, NumericalError

RIDGE = 1e-10
MIN_SAMPLES_PER_COLUMN = 10
_DEGENERATE = 1e-12


class PolynomialBasis(TransformerMixin, BaseEstimator):
    """Monomials of total degree ``<= degree`` with a leading constant column."""

    def __init__(self, degree=2):
        self.degree = degree

    def fit(self, X, y=None):
        X = check_array(X)
        if self.degree < 0:
            raise InputError("polynomial degree must be non-negative")
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        live = scale > _DEGENERATE * np.maximum(1.0, np.abs(self.mean_))
        self.scale_ = np.where(live, scale, 1.0)
        features = np.flatnonzero(live)
        self.powers_ = [
            combo
            for deg in range(1, self.degree + 1)
            for combo in combinations_with_replacement(features, deg)
        ]
        raw = self._monomials(X)
        self.col_mean_ = raw.mean(axis=0)
        col_sd = raw.std(axis=0)
        keep = col_sd > _DEGENERATE
        self.powers_ = [p for p, k in zip(self.powers_, keep) if k]
        self.col_mean_ = self.col_mean_[keep]
        self.col_scale_ = col_sd[keep]
        self.n_features_in_ = X.shape[1]
        return self

    def _monomials(self, X):
        Z = (X - self.mean_) / self.scale_
        if not self.powers_:
            return np.empty((X.shape[0], 0))
        return np.column_stack([np.prod(Z[:, list(p)], axis=1) for p in self.powers_])

    def transform(self, X):
        check_is_fitted(self, "powers_")
        X = check_array(X)
        cols = (self._monomials(X) - self.col_mean_) / self.col_scale_
        return np.column_stack([np.ones(X.shape[0]), cols])

    @property
    def penalized_columns(self):
        """Mask of columns that receive the ridge (everything but the intercept)."""
        check_is_fitted(self, "powers_")
        mask = np.ones(len(self.powers_) + 1, dtype=bool)
        mask[0] = False
        return mask


class IndicatorBasis(TransformerMixin, BaseEstimator):
    """Indicators of ``bins`` equal-count intervals of a single feature."""

    def __init__(self, bins=32):
        self.bins = bins

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] != 1:
            raise InputError("indicator bins need a one-dimensional feature")
        edges = np.unique(np.quantile(X[:, 0], np.linspace(0.0, 1.0, self.bins + 1)[1:-1]))
        self.edges_ = edges
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "edges_")
        X = check_array(X)
        idx = np.searchsorted(self.edges_, X[:, 0], side="right")
        out = np.zeros((X.shape[0], self.edges_.size + 1))
        out[np.arange(X.shape[0]), idx] = 1.0
        return out

    @property
    def penalized_columns(self):
        check_is_fitted(self, "edges_")
        return np.ones(self.edges_.size + 1, dtype=bool)


def make_basis(family="polynomial", degree=2, bins=32):
    if family == "polynomial":
        return PolynomialBasis(degree=degree)
    if family in ("bins", "indicator", "indicator-bins"):
        return IndicatorBasis(bins=bins)
    raise InputError(f"unknown basis family {family!r}")


class Projector:
    """Factorized ridge least squares on a fixed design, reusable across targets."""

    def __init__(self, basis, features, ridge=RIDGE):
        features = np.asarray(features, dtype=float)
        if features.ndim == 1:
            features = features[:, None]
        self.basis = clone(basis).fit(features)
        self.design = self.basis.transform(features)
        M, p = self.design.shape
        if M < MIN_SAMPLES_PER_COLUMN * p:
            raise InputError(f"{M} samples are too few for a basis of dimension {p}")
        self._gram = self.design.T @ self.design / M
        shift = ridge * np.trace(self._gram) / p
        gram = self._gram.copy()
        gram[np.diag_indices(p)] += shift * self.basis.penalized_columns
        try:
            self._factor = cho_factor(gram)
        except LinAlgError as exc:
            raise NumericalError(f"regression design is rank deficient ({p} columns)") from exc
        self.condition = float(np.linalg.cond(gram))

    def coef(self, targets):
        targets = np.asarray(targets, dtype=float)
        rhs = self.design.T @ targets / self.design.shape[0]
        coef = cho_solve(self._factor, rhs)
        # one refinement step removes the ridge bias on well-determined directions
        return coef + cho_solve(self._factor, rhs - self._gram @ coef)

    def fitted(self, targets):
        """In-sample fitted values ``B @ coef`` (same shape as ``targets``)."""
        targets = np.asarray(targets, dtype=float)
        flat = targets.reshape(targets.shape[0], -1)
        out = self.design @ self.coef(flat)
        return out.reshape(targets.shape)

    def predict(self, features, coef):
        features = np.asarray(features, dtype=float)
        if features.ndim == 1:
            features = features[:, None]
        return self.basis.transform(features) @ coef


class LeastSquaresRegressor(RegressorMixin, BaseEstimator):
    """Ridge-guarded least squares on a polynomial or indicator basis."""

    def __init__(self, basis="polynomial", degree=2, bins=32, ridge=RIDGE):
        self.basis = basis
        self.degree = degree
        self.bins = bins
        self.ridge = ridge

    def fit(self, X, y):
        X = check_array(X)
        y = np.asarray(y, dtype=float)
        self._projector = Projector(make_basis(self.basis, self.degree, self.bins), X, self.ridge)
        self.coef_ = self._projector.coef(y)
        fitted = self._projector.design @ self.coef_
        scale = np.linalg.norm(y)
        self.residual_ = float(np.linalg.norm(y - fitted) / scale) if scale > 0 else 0.0
        self.condition_ = self._projector.condition
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return self._projector.predict(check_array(X), self.coef_)


def regress(features, targets, basis="polynomial", degree=2, bins=32) -> LeastSquaresRegressor:
    """Fit ``E[targets | features]``; the returned estimator's ``predict`` evaluates it."""
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[:, None]
    return LeastSquaresRegressor(basis=basis, degree=degree, bins=bins).fit(features, targets)
