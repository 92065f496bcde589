"""Synthetic OHLCV series for experiments and tests.

These generators produce fully valid :class:`CandleSeries` objects: a
deterministic sawtooth (optionally noised) for learning-signal experiments,
and a random walk for property tests. Candles are derived from the close
path with the open at the previous close, so consecutive bars chain without
artificial jumps.
"""

from __future__ import annotations

import numpy as np

from gaftrader.market_data import Candle, CandleSeries

DEFAULT_START = 1_577_836_800  # arbitrary fixed epoch anchor
DEFAULT_INTERVAL = 900


def _series_from_closes(
    closes: np.ndarray,
    start_timestamp: int,
    bar_interval: int,
    wick_frac: float,
    volume: float,
) -> CandleSeries:
    bars = []
    prev = float(closes[0])
    for i, c in enumerate(closes):
        c = float(c)
        open_ = prev
        hi = max(open_, c) * (1.0 + wick_frac)
        lo = min(open_, c) * (1.0 - wick_frac)
        bars.append(
            Candle(
                timestamp=start_timestamp + i * bar_interval,
                open=open_,
                high=hi,
                low=lo,
                close=c,
                volume=volume,
            )
        )
        prev = c
    return CandleSeries.from_bars(bars, bar_interval=bar_interval)


def sawtooth_series(
    n_bars: int,
    *,
    period: int = 20,
    amplitude: float = 0.05,
    base_price: float = 100.0,
    noise: float = 0.0,
    seed: int = 0,
    start_timestamp: int = DEFAULT_START,
    bar_interval: int = DEFAULT_INTERVAL,
) -> CandleSeries:
    """Triangle-wave closes oscillating +-amplitude around the base price.

    With ``noise == 0`` the series is fully deterministic. ``noise`` is the
    standard deviation of an independent multiplicative perturbation per bar.
    """
    if period < 2 or period % 2 != 0:
        raise ValueError("period must be an even integer >= 2")
    half = period // 2
    phase = np.arange(n_bars) % period
    tri = np.where(phase <= half, -1.0 + 2.0 * phase / half, 1.0 - 2.0 * (phase - half) / half)
    closes = base_price * (1.0 + amplitude * tri)
    if noise > 0.0:
        rng = np.random.default_rng(seed)
        closes = closes * (1.0 + rng.normal(0.0, noise, size=n_bars))
    return _series_from_closes(closes, start_timestamp, bar_interval, 5e-4, 1000.0)


def random_walk_series(
    n_bars: int,
    *,
    volatility: float = 0.01,
    drift: float = 0.0,
    base_price: float = 100.0,
    seed: int = 0,
    start_timestamp: int = DEFAULT_START,
    bar_interval: int = DEFAULT_INTERVAL,
) -> CandleSeries:
    """Geometric random walk closes; volatility and drift are per-bar log terms."""
    rng = np.random.default_rng(seed)
    log_returns = rng.normal(drift, volatility, size=n_bars - 1)
    closes = np.empty(n_bars)
    closes[0] = base_price
    closes[1:] = base_price * np.exp(np.cumsum(log_returns))
    return _series_from_closes(closes, start_timestamp, bar_interval, 5e-4, 1000.0)


def constant_series(
    n_bars: int,
    *,
    price: float = 100.0,
    start_timestamp: int = DEFAULT_START,
    bar_interval: int = DEFAULT_INTERVAL,
) -> CandleSeries:
    """Every bar identical; useful for zero-PnL invariants."""
    closes = np.full(n_bars, price)
    return _series_from_closes(closes, start_timestamp, bar_interval, 0.0, 1000.0)
