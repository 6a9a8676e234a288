"""Small input-validation helpers used by the public entry points.

All converters return float64 arrays (the package's core precision) and raise
the package's typed errors rather than bare ValueErrors.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, LengthMismatch


def as_vector(x, name: str = "x") -> np.ndarray:
    """Coerce to a 1-D float64 array of finite values."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatch(f"{name} contains non-finite values")
    return arr


def as_matrix(x, name: str = "X", allow_empty_cols: bool = False) -> np.ndarray:
    """Coerce to a 2-D float64 array; 1-D input becomes a single row."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[1] == 0 and not allow_empty_cols:
        raise DimensionMismatch(f"{name} must have at least one column")
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatch(f"{name} contains non-finite values")
    return arr


def require_nonempty(x, name: str = "data") -> None:
    if len(x) == 0:
        raise EmptyDataset(f"{name} is empty")


def require_same_length(a, b, name_a: str = "a", name_b: str = "b") -> None:
    if len(a) != len(b):
        raise LengthMismatch(
            f"{name_a} has length {len(a)} but {name_b} has length {len(b)}"
        )
