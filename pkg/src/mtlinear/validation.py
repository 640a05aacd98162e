"""Input validation helpers shared across the package."""

import numpy as np


def as_float_matrix(x, name="x", ndim=2):
    """Coerce to a float64 ndarray of the given rank, rejecting non-finite values."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return arr


def check_shape(arr, expected, name="array"):
    if arr.shape != tuple(expected):
        raise ValueError(f"{name} has shape {arr.shape}, expected {tuple(expected)}")


def check_positive(value, name):
    if value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")


def check_lengths(l, h):
    if l < 1 or h < 1:
        raise ValueError(f"lookback and horizon must be >= 1, got l={l}, h={h}")
