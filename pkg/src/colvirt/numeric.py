"""Small numeric helpers shared by ingestion, fitting and the codec."""

from __future__ import annotations

import numpy as np

# Predictions are clipped to this magnitude before the int64 cast so a wildly
# mis-extrapolated model cannot trigger undefined float->int conversion.  The
# writer and reader apply the identical clip, so reconstruction stays exact.
PREDICTION_CLIP = float(2**62)

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


def pow10(p: int) -> float:
    """10**p as a float64 (exact for every p used by scaled columns)."""
    return float(10**p)


def round_half_away_from_zero(x: np.ndarray | float) -> np.ndarray | np.float64:
    """Round to the nearest integer, halves away from zero, in float64."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def round_half_away_to_int64(x: np.ndarray | float) -> np.ndarray:
    """Round like :func:`round_half_away_from_zero`, clip, and cast to int64."""
    r = round_half_away_from_zero(x)
    return np.clip(r, -PREDICTION_CLIP, PREDICTION_CLIP).astype(np.int64)


def zigzag(v: int) -> int:
    """Map a signed integer to the unsigned zig-zag code (0,-1,1,-2 -> 0,1,2,3)."""
    return 2 * v if v >= 0 else -2 * v - 1


def zigzag_bitwidth(lo: int, hi: int) -> int:
    """Bits needed to hold the zig-zag codes of every value in [lo, hi].

    Computed from the extremes only; at least 1 bit even for an all-zero
    range so an "empty" column still costs one bit per row.
    """
    return max(zigzag(int(lo)).bit_length(), zigzag(int(hi)).bit_length(), 1)
