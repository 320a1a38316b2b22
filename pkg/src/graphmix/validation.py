"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def check_dense(X, name: str = "X", allow_1d: bool = False) -> np.ndarray:
    """Coerce to a float64 array of rank 1 or 2 and verify all entries are finite."""
    A = np.asarray(X, dtype=np.float64)
    if A.ndim == 1 and allow_1d:
        pass
    elif A.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


def check_square(A, name: str = "A") -> np.ndarray:
    A = check_dense(A, name)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    return A


def check_symmetric(A, name: str = "A", tol: float = 1e-12) -> np.ndarray:
    A = check_square(A, name)
    if A.size and np.max(np.abs(A - A.T)) > tol:
        raise ValueError(f"{name} is not symmetric within {tol}")
    return A


def check_index_vector(idx, n: int, name: str = "index") -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"{name} out of range [0, {n})")
    return idx


def check_probability(p: float, name: str = "p") -> float:
    p = float(p)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"{name} must lie in [0, 1), got {p}")
    return p
