"""Classical reference estimators: OLS with treatment covariate, per-group OLS, k-NN matching."""
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import ConfigError, NumericError
from .numeric import pairwise_sq_dist
from .validation import check_fitted, check_treatment_data, check_X

logger = logging.getLogger(__name__)

RIDGE_FALLBACK = 1e-6


@dataclass
class EstimatorOutput:
    tau_hat: np.ndarray
    yhat0: np.ndarray
    yhat1: np.ndarray
    name: str

    def __post_init__(self):
        if not np.allclose(self.tau_hat, self.yhat1 - self.yhat0, rtol=0, atol=1e-12):
            raise NumericError("tau_hat must equal yhat1 - yhat0")


def _lstsq(A, y, ridge=True):
    """Least squares; ridge fallback when ``A`` is rank deficient."""
    rank = np.linalg.matrix_rank(A)
    if rank < A.shape[1]:
        if not ridge:
            raise NumericError(f"design matrix has rank {rank} < {A.shape[1]}")
        logger.warning("rank-deficient design (%d < %d); using ridge %g", rank, A.shape[1], RIDGE_FALLBACK)
        return np.linalg.solve(A.T @ A + RIDGE_FALLBACK * np.eye(A.shape[1]), A.T @ y)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef


def _with_intercept(X):
    return np.column_stack([X, np.ones(X.shape[0])])


class OLS1(BaseEstimator):
    """One linear regression on ``[x, t, 1]``; the treatment coefficient is the effect."""

    def __init__(self, ridge_fallback=True):
        self.ridge_fallback = ridge_fallback

    def fit(self, X, t, y):
        X, t, y = check_treatment_data(X, t, y)
        A = np.column_stack([X, t, np.ones(X.shape[0])])
        self.coef_ = _lstsq(A, y, self.ridge_fallback)
        self.n_features_in_ = X.shape[1]
        return self

    def estimate(self, X):
        check_fitted(self, "coef_")
        X = check_X(X, self.n_features_in_)
        base = X @ self.coef_[:-2] + self.coef_[-1]
        effect = self.coef_[-2]
        return EstimatorOutput(np.full(X.shape[0], effect), base, base + effect, "OLS-1")

    def predict(self, X):
        return self.estimate(X).tau_hat


class OLS2(BaseEstimator):
    """Separate linear regressions for treated and control units."""

    def __init__(self, ridge_fallback=True):
        self.ridge_fallback = ridge_fallback

    def fit(self, X, t, y):
        X, t, y = check_treatment_data(X, t, y)
        self.coef0_ = _lstsq(_with_intercept(X[t == 0]), y[t == 0], self.ridge_fallback)
        self.coef1_ = _lstsq(_with_intercept(X[t == 1]), y[t == 1], self.ridge_fallback)
        self.n_features_in_ = X.shape[1]
        return self

    def estimate(self, X):
        check_fitted(self, "coef0_")
        A = _with_intercept(check_X(X, self.n_features_in_))
        y0, y1 = A @ self.coef0_, A @ self.coef1_
        return EstimatorOutput(y1 - y0, y0, y1, "OLS-2")

    def predict(self, X):
        return self.estimate(X).tau_hat


def nearest_neighbours(train_X, query_X, k):
    """Indices of the ``k`` nearest rows of ``train_X``; ties keep the lower index."""
    d = pairwise_sq_dist(query_X, train_X)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


class KNNMatching(BaseEstimator):
    """Impute potential outcomes from the ``k`` nearest same/opposite-group training units.

    With ``factual='observed'`` a unit whose treatment and outcome are passed
    to :meth:`estimate` keeps its observed outcome on the factual side; the
    opposite side is always the k-NN mean. ``factual='knn'`` imputes both sides.
    """

    def __init__(self, k=5, factual="observed"):
        self.k = k
        self.factual = factual

    def fit(self, X, t, y):
        X, t, y = check_treatment_data(X, t, y)
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.factual not in ("observed", "knn"):
            raise ConfigError("factual must be 'observed' or 'knn'")
        for g in (0, 1):
            if np.sum(t == g) < self.k:
                raise ConfigError(f"group {g} has fewer than k={self.k} training units")
        self.X_, self.t_, self.y_ = X, t, y
        self.n_features_in_ = X.shape[1]
        return self

    def _group_mean(self, X, g):
        mask = self.t_ == g
        nn = nearest_neighbours(self.X_[mask], X, self.k)
        return self.y_[mask][nn].mean(axis=1)

    def estimate(self, X, t=None, y=None):
        check_fitted(self, "X_")
        X = check_X(X, self.n_features_in_)
        y0 = self._group_mean(X, 0)
        y1 = self._group_mean(X, 1)
        if self.factual == "observed" and t is not None and y is not None:
            t = np.asarray(t, dtype=np.float64)
            y = np.asarray(y, dtype=np.float64)
            y0 = np.where(t == 0, y, y0)
            y1 = np.where(t == 1, y, y1)
        return EstimatorOutput(y1 - y0, y0, y1, "KNN")

    def predict(self, X, t=None, y=None):
        return self.estimate(X, t, y).tau_hat


def ols1(train, eval_X):
    return OLS1().fit(train.X, train.t, train.y).estimate(eval_X)


def ols2(train, eval_X):
    return OLS2().fit(train.X, train.t, train.y).estimate(eval_X)


def knn(train, eval_X, eval_t=None, k=5, eval_y=None, factual="observed"):
    return KNNMatching(k=k, factual=factual).fit(train.X, train.t, train.y).estimate(eval_X, eval_t, eval_y)
