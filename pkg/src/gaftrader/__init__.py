"""Candlestick pattern trading research toolkit.

Pipeline: OHLCV series -> Gramian angular field tensors -> CNN pattern
probabilities -> PPO trading agent -> deterministic backtest reports.
"""

__version__ = "0.1.0"

from gaftrader.gaf import encode_gaf, encode_window, minmax_scale
from gaftrader.market_data import (
    Candle,
    CandleSeries,
    CsvSchema,
    Window,
    make_windows,
    parse_csv,
    write_csv,
)
from gaftrader.patterns import PatternClass, generate_synthetic, label_window

__all__ = [
    "Candle",
    "CandleSeries",
    "CsvSchema",
    "PatternClass",
    "Window",
    "encode_gaf",
    "encode_window",
    "generate_synthetic",
    "label_window",
    "make_windows",
    "minmax_scale",
    "parse_csv",
    "write_csv",
]
