"""Input validation helpers."""

import numpy as np

from .exceptions import DimensionMismatch


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite 2-D float64 array."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be two-dimensional, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_vector(a, name="vector", size=None):
    arr = np.asarray(a, dtype=float).reshape(-1)
    if size is not None and arr.size != size:
        raise DimensionMismatch(f"{name} must have length {size}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_square(a, name="matrix"):
    arr = as_matrix(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if a.shape != b.shape:
        raise DimensionMismatch(
            f"{names[0]} has shape {a.shape} but {names[1]} has shape {b.shape}"
        )


def orthonormality_error(v):
    """Max-entry deviation of ``v.T @ v`` from the identity."""
    k = v.shape[1]
    return float(np.max(np.abs(v.T @ v - np.eye(k)))) if k else 0.0


def symmetrize(a):
    return 0.5 * (a + a.T)
