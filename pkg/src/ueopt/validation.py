"""Input validation helpers shared across the package.

Every public entry point funnels array arguments through these checks so
that shape and finiteness errors carry the offending argument's name
instead of surfacing later as cryptic broadcasting failures.
"""

from __future__ import annotations

import numpy as np


class ValidationError(ValueError):
    """Raised when an input array violates a documented precondition."""


def check_features(x, *, n_features: int | None = None, name: str = "features") -> np.ndarray:
    """Coerce to a finite float64 2-D array, optionally pinning the width.

    Returns a C-contiguous copy so callers may cache intermediate products
    without aliasing the caller's buffer.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    if n_features is not None and arr.shape[1] != n_features:
        raise ValidationError(
            f"{name} has {arr.shape[1]} columns, expected {n_features}"
        )
    # always copy: downstream containers freeze the writeable flag, which
    # must never reach back into the caller's buffer
    return np.array(arr, order="C", copy=True)


def check_vector(x, *, size: int | None = None, lo: float | None = None,
                 hi: float | None = None, name: str = "vector") -> np.ndarray:
    """Coerce to a finite float64 1-D array with optional size and range checks."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got ndim={arr.ndim}")
    if size is not None and arr.shape[0] != size:
        raise ValidationError(f"{name} has length {arr.shape[0]}, expected {size}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    if lo is not None and arr.size and float(arr.min()) < lo:
        raise ValidationError(f"{name} has entries below {lo}")
    if hi is not None and arr.size and float(arr.max()) > hi:
        raise ValidationError(f"{name} has entries above {hi}")
    return arr


def check_probs(p, *, name: str = "probs", tol: float = 1e-8) -> np.ndarray:
    """Validate a matrix of row distributions: non-negative, rows sum to 1."""
    arr = np.asarray(p, dtype=np.float64)
    one_d = arr.ndim == 1
    if one_d:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise ValidationError(f"{name} must be a vector or matrix of distributions")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    if float(arr.min()) < 0.0:
        raise ValidationError(f"{name} contains negative entries")
    sums = arr.sum(axis=1)
    if not np.allclose(sums, 1.0, rtol=0.0, atol=tol):
        worst = float(np.abs(sums - 1.0).max())
        raise ValidationError(f"{name} rows must sum to 1 (worst deviation {worst:.3g})")
    return arr[0] if one_d else arr


def check_labels(y, *, size: int | None = None, n_classes: int | None = None,
                 name: str = "labels") -> np.ndarray:
    """Coerce to an int64 1-D label array, optionally bounding the range."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got ndim={arr.ndim}")
    if not np.issubdtype(arr.dtype, np.integer):
        if np.issubdtype(arr.dtype, np.floating) and np.all(arr == np.round(arr)):
            arr = arr.astype(np.int64)
        else:
            raise ValidationError(f"{name} must be integers")
    arr = arr.astype(np.int64)
    if size is not None and arr.shape[0] != size:
        raise ValidationError(f"{name} has length {arr.shape[0]}, expected {size}")
    if arr.size and int(arr.min()) < 0:
        raise ValidationError(f"{name} contains negative labels")
    if n_classes is not None and arr.size and int(arr.max()) >= n_classes:
        raise ValidationError(
            f"{name} contains label {int(arr.max())} outside [0, {n_classes})"
        )
    return arr
