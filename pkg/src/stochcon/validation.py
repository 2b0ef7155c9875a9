"""Input validation helpers shared by the estimator-facing API."""

from __future__ import annotations

import numpy as np

from .exceptions import ContractError, DimensionError

__all__ = ["check_array", "check_X_y", "check_random_state", "check_is_fitted"]


def check_array(X, ndim=2, dtype=np.float64, allow_uint8=False):
    """Coerce X to a contiguous array and reject non-finite or mis-shaped input."""
    X = np.asarray(X)
    if allow_uint8 and X.dtype == np.uint8:
        arr = np.ascontiguousarray(X)
    else:
        arr = np.ascontiguousarray(X, dtype=dtype)
        if not np.all(np.isfinite(arr)):
            raise DimensionError("input contains NaN or Inf")
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-d array, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError("input array is empty")
    return arr


def check_X_y(X, y, **kwargs):
    X = check_array(X, **kwargs)
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise DimensionError(f"labels of shape {y.shape} do not match {X.shape[0]} rows")
    y = y.astype(np.int64)
    if np.unique(y).size < 2:
        raise ContractError("labels are degenerate: fewer than two classes present")
    return X, y


def check_random_state(seed) -> np.random.Generator:
    """Accept a seed, a SeedSequence, or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def check_is_fitted(estimator, attr: str):
    if getattr(estimator, attr, None) is None:
        raise ContractError(f"{type(estimator).__name__} is not fitted yet; call fit first")
