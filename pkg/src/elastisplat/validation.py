"""Input validation helpers shared across modules and the estimator facade."""

from __future__ import annotations

import math
from decimal import Decimal
from fractions import Fraction

import numpy as np

from .errors import InvalidAttributeError, InvalidRatioError


def check_ratio(e) -> float:
    """Validate a keep-ratio; must be a finite scalar in (0, 1]."""
    try:
        val = float(e)
    except (TypeError, ValueError) as exc:
        raise InvalidRatioError(f"ratio must be a number, got {e!r}") from exc
    if not math.isfinite(val) or not 0.0 < val <= 1.0:
        raise InvalidRatioError(f"ratio must lie in (0, 1], got {val}")
    return val


def floor_count(e: float, n: int) -> int:
    """floor(e * n) under the ratio's shortest decimal reading.

    A float like 0.29 sits just below the decimal 0.29, so both the naive
    product and the exact binary rational would floor to 28. Interpreting the
    float as its shortest round-tripping decimal keeps the count at the
    intended 29 while staying exact for every representable input.
    """
    e = check_ratio(e)
    if n < 0:
        raise InvalidAttributeError(f"count must be non-negative, got {n}")
    return math.floor(Fraction(Decimal(repr(e))) * n)


def check_finite(name: str, arr, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Coerce to float64, enforce an exact shape, reject non-finite entries."""
    out = np.asarray(arr, dtype=np.float64)
    if shape is not None and out.shape != shape:
        raise InvalidAttributeError(f"{name} has shape {out.shape}, expected {shape}")
    if not np.all(np.isfinite(out)):
        raise InvalidAttributeError(f"{name} contains non-finite values")
    return out
