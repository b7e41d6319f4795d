"""Input checks for the estimator API."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.utils.validation import check_array

from .errors import DimensionError, LookupContractError


def check_tokens(X, d: Optional[int] = None) -> np.ndarray:
    """Finite float64 array of shape (n_samples, n_tokens, d) with n_samples, n_tokens >= 1."""
    X = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False, ensure_all_finite=True)
    if X.ndim != 3:
        raise DimensionError(f"expected (n_samples, n_tokens, d), got shape {X.shape}")
    if X.shape[1] == 0:
        raise DimensionError("samples must contain at least one token")
    if d is not None and X.shape[2] != d:
        raise DimensionError(f"expected token width {d}, got {X.shape[2]}")
    return X


def check_targets(y, X: np.ndarray) -> np.ndarray:
    y = check_array(y, dtype=np.float64, allow_nd=True, ensure_2d=False, ensure_all_finite=True)
    if y.shape != X.shape:
        raise DimensionError(f"targets shape {y.shape} != inputs shape {X.shape}")
    return y


def check_task_ids(task_ids, n: int) -> Optional[np.ndarray]:
    if task_ids is None:
        return None
    ids = np.asarray(task_ids)
    if ids.shape != (n,):
        raise DimensionError(f"expected {n} task IDs, got shape {ids.shape}")
    if ids.dtype.kind not in "iu":
        raise LookupContractError(f"task IDs must be integers, got dtype {ids.dtype}")
    if n and ids.min() < 0:
        raise LookupContractError(f"negative task ID {int(ids.min())}")
    return ids.astype(np.int64)
