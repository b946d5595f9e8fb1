"""Small input-validation helpers shared by the estimators."""
import numpy as np

from .exceptions import InputError


def check_matrix(X, n_features=None, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise InputError(f"{name} must be 2-D, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise InputError(f"{name} has {X.shape[1]} features, expected {n_features}")
    if not np.all(np.isfinite(X)):
        raise InputError(f"{name} contains non-finite values")
    return X


def check_bins(b, n, name):
    b = np.asarray(b)
    if b.ndim == 0:
        b = b[None]
    if b.shape != (n,):
        raise InputError(f"{name} must have shape ({n},), got {b.shape}")
    if b.size and (not np.issubdtype(b.dtype, np.integer) and not np.all(b == np.round(b))):
        raise InputError(f"{name} must be integer bins")
    b = b.astype(np.int64)
    if b.size and (b.min() < 0 or b.max() > 4):
        raise InputError(f"{name} outside 0..4")
    return b


def check_vector(y, n=None, name="y"):
    y = np.asarray(y, dtype=float).ravel()
    if n is not None and y.shape[0] != n:
        raise InputError(f"{name} has length {y.shape[0]}, expected {n}")
    if not np.all(np.isfinite(y)):
        raise InputError(f"{name} contains non-finite values")
    return y
