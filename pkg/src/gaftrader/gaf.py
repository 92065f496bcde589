"""Gramian angular field encoding of scalar series and OHLC windows.

A series x is min-max scaled to [0, 1], mapped to angles phi_i = arccos(x_i),
and expanded into the summation-form matrix G[i, j] = cos(phi_i + phi_j).
The result is symmetric, bounded in [-1, 1], and invariant under positive
affine transforms of the input, which is what makes it a usable image
encoding for price windows: only the shape of the series survives.

For an OHLC window the four price series are encoded independently and
stacked channels-last in the fixed order ``CHANNELS``.
"""

from __future__ import annotations

import numpy as np

from gaftrader.market_data import Window

CHANNELS = ("open", "high", "low", "close")


def minmax_scale(x: np.ndarray | list[float]) -> np.ndarray:
    """Scale a sequence into [0, 1]; a constant sequence maps to all 0.5.

    The 0.5 convention keeps flat price windows encodable (angle pi/3)
    instead of erroring on legitimate market data.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"expected a non-empty 1-D sequence, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("input contains NaN or infinity")
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        return np.full_like(arr, 0.5)
    return (arr - lo) / (hi - lo)


def encode_gaf(x: np.ndarray | list[float]) -> np.ndarray:
    """Encode a scalar series of length W >= 2 into its W x W angular field."""
    scaled = minmax_scale(x)
    if scaled.size < 2:
        raise ValueError("series must have at least 2 points")
    phi = np.arccos(np.clip(scaled, 0.0, 1.0))  # phi in [0, pi/2]
    return np.cos(phi[:, None] + phi[None, :])


def encode_window(window: Window) -> np.ndarray:
    """Encode one OHLC window into a (W, W, 4) tensor, channels in ``CHANNELS`` order.

    Each channel is scaled independently, preserving every series' own shape.
    """
    series = (window.opens(), window.highs(), window.lows(), window.closes())
    return np.stack([encode_gaf(s) for s in series], axis=-1)


def encode_windows(windows: list[Window]) -> np.ndarray:
    """Stack encodings of equally sized windows into an (N, W, W, 4) batch."""
    if not windows:
        raise ValueError("no windows to encode")
    return np.stack([encode_window(w) for w in windows], axis=0)
