"""Input validation helpers shared by the estimators and the functional API."""

import numpy as np

from .exceptions import DimensionError, DomainError, NumericError


def check_matrix(X, name="X", n_features=None, allow_empty=False):
    """Return ``X`` as a finite 2-D float64 array.

    Parameters
    ----------
    X : array-like, shape (n_samples, n_features)
    name : str
        Used in error messages.
    n_features : int, optional
        Required column count.
    allow_empty : bool
        Whether zero rows are acceptable.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got {X.ndim}-D")
    if not allow_empty and X.shape[0] == 0:
        raise DomainError(f"{name} has no rows")
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionError(
            f"{name} has {X.shape[1]} features, expected {n_features}")
    if not np.all(np.isfinite(X)):
        raise NumericError(f"{name} contains non-finite values")
    return X


def check_vector(x, name="x", length=None):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got {x.ndim}-D")
    if length is not None and x.shape[0] != length:
        raise DimensionError(f"{name} has length {x.shape[0]}, expected {length}")
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name} contains non-finite values")
    return x


def check_labels(y, n_samples=None, name="y"):
    """Return ``y`` as a float array whose entries are exactly -1 or +1."""
    y = check_vector(y, name=name, length=n_samples)
    bad = ~np.isin(y, (-1.0, 1.0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(f"{name}[{i}] = {y[i]!r} is not -1 or +1")
    return y


def check_X_y(X, y, n_features=None, soft=False):
    """Validate a training pair.

    With ``soft=True`` the targets may be any finite reals (typically scores
    in [-1, 1]) instead of hard labels.
    """
    X = check_matrix(X, n_features=n_features)
    if soft:
        y = check_vector(y, name="y", length=X.shape[0])
    else:
        y = check_labels(y, n_samples=X.shape[0])
    return X, y


def check_positive(value, name, integer=False):
    if integer:
        if int(value) != value or value < 1:
            raise DomainError(f"{name} must be a positive integer, got {value!r}")
        return int(value)
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise DomainError(f"{name} must be positive, got {value!r}")
    return value


def sign_pm(scores):
    """Map real scores to {-1, +1}, sending exact zeros to +1."""
    return np.where(np.asarray(scores) >= 0, 1.0, -1.0)
