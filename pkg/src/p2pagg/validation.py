"""Input validation shared by the estimator layer and the round driver."""

from __future__ import annotations

from fractions import Fraction
from numbers import Real

import numpy as np


def check_vector(x, name: str = "vector", size: int | None = None) -> np.ndarray:
    """A finite 1-d float64 copy of ``x``."""
    arr = np.array(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if size is not None and arr.size != size:
        raise ValueError(f"{name} must have {size} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_fraction(x, name: str, low=0, high=1, closed_high: bool = False) -> Fraction:
    """Parse ``x`` (int, float, Fraction or "a/b") and bound it to ``[low, high)``."""
    if isinstance(x, Real) and not isinstance(x, (int, Fraction)):
        x = str(x)
    try:
        value = Fraction(x)
    except (ValueError, ZeroDivisionError, TypeError) as exc:
        raise ValueError(f"{name} is not a rational number: {x!r}") from exc
    above = value > high if closed_high else value >= high
    if value < low or above:
        bracket = "]" if closed_high else ")"
        raise ValueError(f"{name}={value} outside [{low}, {high}{bracket}")
    return value


def check_positive_int(x, name: str, minimum: int = 1) -> int:
    if isinstance(x, bool) or not isinstance(x, (int, np.integer)):
        raise TypeError(f"{name} must be an integer, got {type(x).__name__}")
    if x < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {x}")
    return int(x)
