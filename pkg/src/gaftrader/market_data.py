"""OHLCV market data: CSV ingestion, validation, and sliding windows.

A :class:`CandleSeries` is validated on construction: every bar must satisfy
the OHLC ordering invariants, timestamps must strictly increase on a constant
bar interval, and gaps (missing bars) are recorded rather than filled.
Windowing produces fixed-length views whose "next" bar is always available
for fill and reward computation downstream.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, fields
from functools import cached_property
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class MarketDataError(ValueError):
    """Base class for market data failures."""


class CsvParseError(MarketDataError):
    """Malformed CSV content (missing column, unparseable field)."""


class ValidationError(MarketDataError):
    """A bar violates the OHLC invariants."""


class OrderingError(MarketDataError):
    """Timestamps are non-monotonic or off the bar interval grid."""


class InsufficientDataError(MarketDataError):
    """Series too short for the requested operation."""


@dataclass(frozen=True)
class Candle:
    """One OHLCV bar. Prices are positive reals, volume non-negative."""

    timestamp: int
    open: float
    high: float
    low: float
    close: float
    volume: float

    def __post_init__(self) -> None:
        prices = (self.open, self.high, self.low, self.close)
        if not all(np.isfinite(p) for p in prices) or not np.isfinite(self.volume):
            raise ValidationError(f"non-finite field in bar at t={self.timestamp}")
        if min(prices) <= 0.0:
            raise ValidationError(f"non-positive price in bar at t={self.timestamp}")
        if self.volume < 0.0:
            raise ValidationError(f"negative volume at t={self.timestamp}")
        if self.high < self.low:
            raise ValidationError(f"high {self.high} < low {self.low}")
        if self.low > min(self.open, self.close):
            raise ValidationError(f"low {self.low} above body at t={self.timestamp}")
        if self.high < max(self.open, self.close):
            raise ValidationError(f"high {self.high} below body at t={self.timestamp}")

    # Shape helpers used by the pattern rules. All are ratios or price
    # comparisons, so predicates built on them are invariant under a
    # positive rescaling of the whole series.
    @property
    def body(self) -> float:
        return abs(self.close - self.open)

    @property
    def range_(self) -> float:
        return self.high - self.low

    @property
    def upper_shadow(self) -> float:
        return self.high - max(self.open, self.close)

    @property
    def lower_shadow(self) -> float:
        return min(self.open, self.close) - self.low

    @property
    def is_bullish(self) -> bool:
        return self.close > self.open

    @property
    def is_bearish(self) -> bool:
        return self.close < self.open


@dataclass(frozen=True)
class CsvSchema:
    """Column-name mapping for OHLCV CSV files."""

    timestamp: str = "timestamp"
    open: str = "open"
    high: str = "high"
    low: str = "low"
    close: str = "close"
    volume: str = "volume"

    @classmethod
    def from_config(cls, options: dict[str, str]) -> "CsvSchema":
        """Build a schema from ``col_<field>=<name>`` configuration keys."""
        kwargs = {}
        for f in fields(cls):
            key = f"col_{f.name}"
            if key in options:
                kwargs[f.name] = options[key]
        return cls(**kwargs)


@dataclass(eq=False)
class CandleSeries:
    """Immutable, validated sequence of bars on a constant interval.

    ``gap_indices`` holds every index i where bars[i] -> bars[i+1] skips at
    least one bar. Gaps are logged as warnings at construction; nothing is
    interpolated.
    """

    bars: tuple[Candle, ...]
    bar_interval: int
    gap_indices: tuple[int, ...]

    @classmethod
    def from_bars(
        cls, bars: list[Candle] | tuple[Candle, ...], bar_interval: int | None = None
    ) -> "CandleSeries":
        bars = tuple(bars)
        if not bars:
            raise InsufficientDataError("empty series")
        deltas = [b.timestamp - a.timestamp for a, b in zip(bars, bars[1:])]
        for i, d in enumerate(deltas):
            if d <= 0:
                raise OrderingError(
                    f"non-monotonic timestamps: bar {i + 1} at t={bars[i + 1].timestamp} "
                    f"does not follow t={bars[i].timestamp}"
                )
        if bar_interval is None:
            bar_interval = min(deltas) if deltas else 0
            if deltas:
                # Prefer the most frequent spacing; min() alone misreads a
                # single anomalous short delta.
                bar_interval = Counter(deltas).most_common(1)[0][0]
        gaps = []
        for i, d in enumerate(deltas):
            if bar_interval > 0 and d % bar_interval != 0:
                raise OrderingError(
                    f"timestamp delta {d} between bars {i} and {i + 1} is not a "
                    f"multiple of the bar interval {bar_interval}"
                )
            if d != bar_interval and bar_interval > 0:
                gaps.append(i)
        if gaps:
            logger.warning(
                "series has %d gap(s); first after bar %d (t=%d)",
                len(gaps),
                gaps[0],
                bars[gaps[0]].timestamp,
            )
        return cls(bars=bars, bar_interval=int(bar_interval), gap_indices=tuple(gaps))

    def __len__(self) -> int:
        return len(self.bars)

    @property
    def start_timestamp(self) -> int:
        return self.bars[0].timestamp

    @property
    def end_timestamp(self) -> int:
        return self.bars[-1].timestamp

    @cached_property
    def opens(self) -> np.ndarray:
        return np.array([b.open for b in self.bars])

    @cached_property
    def highs(self) -> np.ndarray:
        return np.array([b.high for b in self.bars])

    @cached_property
    def lows(self) -> np.ndarray:
        return np.array([b.low for b in self.bars])

    @cached_property
    def closes(self) -> np.ndarray:
        return np.array([b.close for b in self.bars])

    @cached_property
    def timestamps(self) -> np.ndarray:
        return np.array([b.timestamp for b in self.bars], dtype=np.int64)


@dataclass(frozen=True)
class Window:
    """Fixed-length slice of a series, anchored at ``origin_index``."""

    bars: tuple[Candle, ...]
    origin_index: int

    def __post_init__(self) -> None:
        if len(self.bars) < 2:
            raise ValidationError("window must hold at least 2 bars")

    def __len__(self) -> int:
        return len(self.bars)

    def opens(self) -> np.ndarray:
        return np.array([b.open for b in self.bars])

    def highs(self) -> np.ndarray:
        return np.array([b.high for b in self.bars])

    def lows(self) -> np.ndarray:
        return np.array([b.low for b in self.bars])

    def closes(self) -> np.ndarray:
        return np.array([b.close for b in self.bars])


def parse_csv(
    path: str | Path,
    schema: CsvSchema | None = None,
    bar_interval: int | None = None,
) -> CandleSeries:
    """Read and validate an OHLCV CSV file.

    The first line must be a header naming the mapped columns. Errors carry
    the 1-based line number of the offending row.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise CsvParseError(f"{path}: empty file")
        missing = [
            name
            for name in (schema.timestamp, schema.open, schema.high, schema.low,
                         schema.close, schema.volume)
            if name not in reader.fieldnames
        ]
        if missing:
            raise CsvParseError(f"{path}: header is missing column(s) {missing}")
        bars = []
        for lineno, row in enumerate(reader, start=2):
            try:
                bar = Candle(
                    timestamp=int(row[schema.timestamp]),
                    open=float(row[schema.open]),
                    high=float(row[schema.high]),
                    low=float(row[schema.low]),
                    close=float(row[schema.close]),
                    volume=float(row[schema.volume]),
                )
            except ValidationError as exc:
                raise ValidationError(f"{exc} at line {lineno}") from exc
            except (TypeError, ValueError) as exc:
                raise CsvParseError(f"{path}: malformed row at line {lineno}: {exc}") from exc
            bars.append(bar)
    if not bars:
        raise InsufficientDataError(f"{path}: no data rows")
    return CandleSeries.from_bars(bars, bar_interval=bar_interval)


def write_csv(series: CandleSeries, path: str | Path, schema: CsvSchema | None = None) -> None:
    """Write a series back to CSV. Floats use repr, so a parse round-trips exactly."""
    schema = schema or CsvSchema()
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [schema.timestamp, schema.open, schema.high, schema.low, schema.close, schema.volume]
        )
        for b in series.bars:
            writer.writerow(
                [b.timestamp, repr(b.open), repr(b.high), repr(b.low), repr(b.close), repr(b.volume)]
            )


def make_windows(series: CandleSeries, w: int, gap_policy: str = "exclude") -> list[Window]:
    """Slide a length-``w`` window over the series.

    Window k covers bars [k, k+w); bar k+w is deliberately left outside so a
    consumer always has a "next" bar for fills and rewards. On a gap-free
    series this yields exactly len(series) - w windows with origins
    0..len-w-1. With ``gap_policy="exclude"`` (default) any window whose
    covered span, including the next bar, crosses a gap is dropped;
    ``"include"`` keeps all windows.
    """
    if w < 2:
        raise ValueError(f"window size must be >= 2, got {w}")
    if gap_policy not in ("exclude", "include"):
        raise ValueError(f"unknown gap policy {gap_policy!r}")
    n = len(series)
    if n <= w:
        raise InsufficientDataError(
            f"series of length {n} cannot produce windows of size {w} "
            f"with a next bar (need at least {w + 1} bars)"
        )
    gap_set = set(series.gap_indices)
    windows = []
    for k in range(n - w):
        if gap_policy == "exclude" and gap_set and any(
            i in gap_set for i in range(k, k + w)
        ):
            continue
        windows.append(Window(bars=series.bars[k : k + w], origin_index=k))
    return windows
