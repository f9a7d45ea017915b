"""Input checks shared by the estimators and module functions."""

from __future__ import annotations

import numpy as np

MIN_LEVELS = 50


def check_spectrum(levels, min_levels: int = MIN_LEVELS) -> np.ndarray:
    """Finite 1-D eigenvalue array, sorted ascending."""
    arr = np.asarray(levels, dtype=float)
    if arr.ndim == 2 and 1 in arr.shape:
        arr = arr.ravel()
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D spectrum, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("spectrum contains non-finite values")
    if len(arr) < min_levels:
        raise ValueError(f"need at least {min_levels} levels, got {len(arr)}")
    return np.sort(arr)


def check_spacings(spacings) -> np.ndarray:
    arr = np.asarray(spacings, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("no spacings given")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("spacings must be finite and non-negative")
    return arr


def check_positive(name: str, value, integer: bool = False):
    if integer:
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
        return int(value)
    value = float(value)
    if not value > 0 or not np.isfinite(value):
        raise ValueError(f"{name} must be positive, got {value!r}")
    return value


def check_multiple(name: str, value: float, unit: float, unit_name: str, rtol: float = 1e-9) -> int:
    """Integer ``k`` with ``value == k * unit``; raises otherwise."""
    k = int(round(value / unit))
    if abs(k * unit - value) > rtol * unit:
        raise ValueError(f"{name}={value!r} is not a multiple of {unit_name}={unit!r}")
    return k
