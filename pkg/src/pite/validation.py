"""Input checks shared by the estimators."""
import numpy as np
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_consistent_length

from .exceptions import ConfigError, ShapeError, SingleGroupError


def check_X(X, n_features=None):
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if n_features is not None and X.shape[1] != n_features:
        raise ShapeError(f"X has {X.shape[1]} features, estimator was fitted with {n_features}")
    return X


def check_treatment(t):
    t = check_array(np.asarray(t).reshape(-1, 1), dtype=np.float64).ravel()
    if not np.all((t == 0) | (t == 1)):
        raise ConfigError("treatment must be binary (0/1)")
    return t


def check_treatment_data(X, t, y, both_groups=True):
    """Validate ``(X, t, y)`` and return float64 arrays."""
    X = check_X(X)
    t = check_treatment(t)
    y = check_array(np.asarray(y).reshape(-1, 1), dtype=np.float64).ravel()
    check_consistent_length(X, t, y)
    if both_groups and (t.min() == t.max()):
        raise SingleGroupError("both treated and control units are required")
    return X, t, y


def check_fitted(est, attr):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")
