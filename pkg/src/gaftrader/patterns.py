"""Candlestick pattern rules, window labeling, and synthetic training data.

Eight classic reversal patterns plus an explicit "none" class. Every rule is
a pure predicate over the final 1-3 candles of a window plus a trend
requirement on the closes immediately before them. All predicates compare
prices or price ratios, never absolute differences, so labels are invariant
under a positive rescaling of the window.

Threshold table (fixed constants used by the rules):

    SMALL_BODY_MAX      body < 30% of the candle's high-low range
    LONG_BODY_MIN       body > 60% of the candle's high-low range
    HARAMI_BODY_MAX     inner body at most 50% of the outer body
    HAMMER_SHADOW_RATIO lower shadow at least 2x the body
    HAMMER_UPPER_MAX    upper shadow at most 10% of the range
    STAR_CLOSE_DEPTH    third star candle closes past 50% of the first body
    TREND_BARS          trend = 3 strictly monotone closes before the pattern

When several rules fire, longer patterns win (3-candle over 2-candle over
1-candle), then enum order breaks ties, so labeling is deterministic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from gaftrader.market_data import Candle, Window

SMALL_BODY_MAX = 0.30
LONG_BODY_MIN = 0.60
HARAMI_BODY_MAX = 0.50
HAMMER_SHADOW_RATIO = 2.0
HAMMER_UPPER_MAX = 0.10
STAR_CLOSE_DEPTH = 0.50
TREND_BARS = 3

DEFAULT_WINDOW = 10
MIN_WINDOW = TREND_BARS + 3  # longest pattern is 3 candles


class PatternClass(IntEnum):
    """The label set; integer codes are stable for serialization."""

    BULLISH_ENGULFING = 0
    BEARISH_ENGULFING = 1
    MORNING_STAR = 2
    EVENING_STAR = 3
    BULLISH_HARAMI = 4
    BEARISH_HARAMI = 5
    HAMMER = 6
    HANGING_MAN = 7
    NONE = 8


N_CLASSES = len(PatternClass)


def _small_body(c: Candle) -> bool:
    return c.range_ > 0 and c.body < SMALL_BODY_MAX * c.range_


def _long_body(c: Candle) -> bool:
    return c.range_ > 0 and c.body > LONG_BODY_MIN * c.range_


def _trend_down(bars: Sequence[Candle], pattern_len: int) -> bool:
    c = [b.close for b in bars[-pattern_len - TREND_BARS : -pattern_len]]
    return len(c) == TREND_BARS and c[0] > c[1] > c[2]


def _trend_up(bars: Sequence[Candle], pattern_len: int) -> bool:
    c = [b.close for b in bars[-pattern_len - TREND_BARS : -pattern_len]]
    return len(c) == TREND_BARS and c[0] < c[1] < c[2]


def is_bullish_engulfing(bars: Sequence[Candle]) -> bool:
    a, b = bars[-2], bars[-1]
    return (
        _trend_down(bars, 2)
        and a.is_bearish
        and b.is_bullish
        and b.open < a.close   # strict body containment, bottom
        and b.close > a.open   # strict body containment, top
    )


def is_bearish_engulfing(bars: Sequence[Candle]) -> bool:
    a, b = bars[-2], bars[-1]
    return (
        _trend_up(bars, 2)
        and a.is_bullish
        and b.is_bearish
        and b.open > a.close
        and b.close < a.open
    )


def is_morning_star(bars: Sequence[Candle]) -> bool:
    c1, c2, c3 = bars[-3], bars[-2], bars[-1]
    if not (_trend_down(bars, 3) and _long_body(c1) and c1.is_bearish):
        return False
    star_top = max(c2.open, c2.close)
    if not (_small_body(c2) and star_top < c1.close):  # star body gaps below
        return False
    reclaim = c1.close + STAR_CLOSE_DEPTH * (c1.open - c1.close)
    return c3.is_bullish and c3.close > reclaim


def is_evening_star(bars: Sequence[Candle]) -> bool:
    c1, c2, c3 = bars[-3], bars[-2], bars[-1]
    if not (_trend_up(bars, 3) and _long_body(c1) and c1.is_bullish):
        return False
    star_bottom = min(c2.open, c2.close)
    if not (_small_body(c2) and star_bottom > c1.close):  # star body gaps above
        return False
    reclaim = c1.close - STAR_CLOSE_DEPTH * (c1.close - c1.open)
    return c3.is_bearish and c3.close < reclaim


def is_bullish_harami(bars: Sequence[Candle]) -> bool:
    a, b = bars[-2], bars[-1]
    return (
        _trend_down(bars, 2)
        and _long_body(a)
        and a.is_bearish
        and b.is_bullish
        and b.open > a.close    # inner body strictly inside the outer body
        and b.close < a.open
        and b.body <= HARAMI_BODY_MAX * a.body
    )


def is_bearish_harami(bars: Sequence[Candle]) -> bool:
    a, b = bars[-2], bars[-1]
    return (
        _trend_up(bars, 2)
        and _long_body(a)
        and a.is_bullish
        and b.is_bearish
        and b.close > a.open
        and b.open < a.close
        and b.body <= HARAMI_BODY_MAX * a.body
    )


def _hammer_shape(c: Candle) -> bool:
    return (
        c.range_ > 0
        and c.body > 0
        and c.lower_shadow >= HAMMER_SHADOW_RATIO * c.body
        and c.upper_shadow <= HAMMER_UPPER_MAX * c.range_
    )


def is_hammer(bars: Sequence[Candle]) -> bool:
    return _trend_down(bars, 1) and _hammer_shape(bars[-1])


def is_hanging_man(bars: Sequence[Candle]) -> bool:
    return _trend_up(bars, 1) and _hammer_shape(bars[-1])


@dataclass(frozen=True)
class PatternRule:
    """One rule: its class, how many candles it inspects, and the predicate."""

    pattern_class: PatternClass
    candle_count: int
    predicate: Callable[[Sequence[Candle]], bool]


# Precedence: more candles first, then enum order.
RULES: tuple[PatternRule, ...] = (
    PatternRule(PatternClass.MORNING_STAR, 3, is_morning_star),
    PatternRule(PatternClass.EVENING_STAR, 3, is_evening_star),
    PatternRule(PatternClass.BULLISH_ENGULFING, 2, is_bullish_engulfing),
    PatternRule(PatternClass.BEARISH_ENGULFING, 2, is_bearish_engulfing),
    PatternRule(PatternClass.BULLISH_HARAMI, 2, is_bullish_harami),
    PatternRule(PatternClass.BEARISH_HARAMI, 2, is_bearish_harami),
    PatternRule(PatternClass.HAMMER, 1, is_hammer),
    PatternRule(PatternClass.HANGING_MAN, 1, is_hanging_man),
)


def label_window(window: Window) -> PatternClass:
    """Label a window with the highest-precedence matching pattern, or NONE."""
    if len(window) < MIN_WINDOW:
        raise ValueError(
            f"window of {len(window)} bars is too short to label "
            f"(need at least {MIN_WINDOW})"
        )
    for rule in RULES:
        if rule.predicate(window.bars):
            return rule.pattern_class
    return PatternClass.NONE


# ---------------------------------------------------------------------------
# Synthetic window generation
# ---------------------------------------------------------------------------

_BASE_TIMESTAMP = 1_577_836_800
_BAR_SECONDS = 900


def _candle(rng, ts: int, open_: float, close: float, upper: float, lower: float) -> Candle:
    high = max(open_, close) + max(upper, 0.0)
    low = min(open_, close) - max(lower, 0.0)
    return Candle(
        timestamp=ts,
        open=open_,
        high=high,
        low=low,
        close=close,
        volume=float(rng.uniform(100.0, 10_000.0)),
    )


def _context_bars(rng, n: int, base: float, step: float, direction: int) -> list[Candle]:
    """n context bars ending in TREND_BARS strictly monotone closes.

    The earlier bars drift loosely in the trend direction so windows are not
    carbon copies of each other; only the final three closes are forced
    monotone, which is all the rules inspect.
    """
    closes = [base]
    for i in range(1, n):
        if i >= n - TREND_BARS + 1 or n - i <= TREND_BARS:
            move = direction * step * rng.uniform(0.6, 1.4)
        else:
            move = direction * step * rng.uniform(-0.5, 1.2)
        closes.append(closes[-1] + move)
    bars = []
    prev_close = closes[0] - direction * step * rng.uniform(0.3, 1.0)
    for i, c in enumerate(closes):
        open_ = prev_close + step * rng.uniform(-0.15, 0.15)
        bars.append(
            _candle(
                rng,
                _BASE_TIMESTAMP + i * _BAR_SECONDS,
                open_,
                c,
                upper=step * rng.uniform(0.0, 0.4),
                lower=step * rng.uniform(0.0, 0.4),
            )
        )
        prev_close = c
    return bars


def _retime(bars: list[Candle]) -> tuple[Candle, ...]:
    return tuple(
        Candle(
            timestamp=_BASE_TIMESTAMP + i * _BAR_SECONDS,
            open=b.open,
            high=b.high,
            low=b.low,
            close=b.close,
            volume=b.volume,
        )
        for i, b in enumerate(bars)
    )


def _engulfing_tail(rng, p: float, step: float, bullish: bool) -> list[Candle]:
    sign = 1.0 if bullish else -1.0
    body_a = step * rng.uniform(0.5, 1.2)
    open_a = p - sign * step * rng.uniform(0.0, 0.3)
    close_a = open_a - sign * body_a
    open_b = close_a - sign * body_a * rng.uniform(0.05, 0.5)
    close_b = open_a + sign * body_a * rng.uniform(0.05, 0.5)
    shad = body_a * 0.15
    a = _candle(rng, 0, open_a, close_a, rng.uniform(0, shad), rng.uniform(0, shad))
    b = _candle(rng, 0, open_b, close_b, rng.uniform(0, shad), rng.uniform(0, shad))
    return [a, b]


def _star_tail(rng, p: float, step: float, bullish: bool) -> list[Candle]:
    # bullish=True builds a morning star; mirrored for the evening star.
    sign = 1.0 if bullish else -1.0
    body1 = step * rng.uniform(0.9, 1.6)
    open1 = p - sign * step * rng.uniform(0.0, 0.25)
    close1 = open1 - sign * body1
    c1 = _candle(rng, 0, open1, close1,
                 rng.uniform(0, 0.2) * body1, rng.uniform(0, 0.2) * body1)
    gap = body1 * rng.uniform(0.05, 0.3)
    body2 = body1 * rng.uniform(0.05, 0.2)
    edge2 = close1 - sign * gap
    far2 = edge2 - sign * body2
    o2, cl2 = (edge2, far2) if rng.random() < 0.5 else (far2, edge2)
    c2 = _candle(rng, 0, o2, cl2,
                 body2 * rng.uniform(1.3, 2.2), body2 * rng.uniform(1.3, 2.2))
    open3 = edge2 + sign * body2 * rng.uniform(-0.5, 0.5)
    close3 = close1 + sign * body1 * rng.uniform(0.62, 1.1)
    c3 = _candle(rng, 0, open3, close3,
                 rng.uniform(0, 0.15) * body1, rng.uniform(0, 0.15) * body1)
    return [c1, c2, c3]


def _harami_tail(rng, p: float, step: float, bullish: bool) -> list[Candle]:
    sign = 1.0 if bullish else -1.0
    body_a = step * rng.uniform(1.0, 1.8)
    open_a = p - sign * step * rng.uniform(0.0, 0.25)
    close_a = open_a - sign * body_a
    a = _candle(rng, 0, open_a, close_a,
                rng.uniform(0, 0.2) * body_a, rng.uniform(0, 0.2) * body_a)
    body_b = body_a * rng.uniform(0.15, 0.45)
    open_b = close_a + sign * body_a * rng.uniform(0.1, 0.35)
    close_b = open_b + sign * body_b
    shad_b = body_b * rng.uniform(0.0, 0.3)
    b = _candle(rng, 0, open_b, close_b, shad_b, shad_b)
    return [a, b]


def _hammer_tail(rng, p: float, step: float, downtrend: bool) -> list[Candle]:
    sign = 1.0 if downtrend else -1.0
    rng_total = step * rng.uniform(1.2, 2.2)
    upper = rng_total * rng.uniform(0.0, 0.08)
    body = rng_total * rng.uniform(0.10, 0.28)
    high = p - sign * step * rng.uniform(0.0, 0.4)
    top_body = high - upper
    bottom_body = top_body - body
    o, c = (bottom_body, top_body) if rng.random() < 0.5 else (top_body, bottom_body)
    low = high - rng_total
    return [
        Candle(
            timestamp=0,
            open=o,
            high=high,
            low=low,
            close=c,
            volume=float(rng.uniform(100.0, 10_000.0)),
        )
    ]


def _random_walk_window(rng, n: int) -> tuple[Candle, ...]:
    base = float(np.exp(rng.uniform(np.log(20.0), np.log(2000.0))))
    step = base * rng.uniform(0.003, 0.015)
    closes = base + np.cumsum(rng.normal(0.0, step, size=n))
    bars = []
    prev = closes[0] + rng.normal(0.0, step)
    for i, c in enumerate(closes):
        open_ = prev + rng.normal(0.0, 0.2 * step)
        bars.append(
            _candle(
                rng,
                _BASE_TIMESTAMP + i * _BAR_SECONDS,
                open_,
                float(c),
                upper=abs(rng.normal(0.0, 0.4 * step)),
                lower=abs(rng.normal(0.0, 0.4 * step)),
            )
        )
        prev = float(c)
    return tuple(bars)


_TAILS = {
    PatternClass.BULLISH_ENGULFING: (2, -1, lambda rng, p, s: _engulfing_tail(rng, p, s, True)),
    PatternClass.BEARISH_ENGULFING: (2, +1, lambda rng, p, s: _engulfing_tail(rng, p, s, False)),
    PatternClass.MORNING_STAR: (3, -1, lambda rng, p, s: _star_tail(rng, p, s, True)),
    PatternClass.EVENING_STAR: (3, +1, lambda rng, p, s: _star_tail(rng, p, s, False)),
    PatternClass.BULLISH_HARAMI: (2, -1, lambda rng, p, s: _harami_tail(rng, p, s, True)),
    PatternClass.BEARISH_HARAMI: (2, +1, lambda rng, p, s: _harami_tail(rng, p, s, False)),
    PatternClass.HAMMER: (1, -1, lambda rng, p, s: _hammer_tail(rng, p, s, True)),
    PatternClass.HANGING_MAN: (1, +1, lambda rng, p, s: _hammer_tail(rng, p, s, False)),
}


def _sample_window(rng, cls: PatternClass, window_len: int) -> Window:
    if cls == PatternClass.NONE:
        return Window(bars=_random_walk_window(rng, window_len), origin_index=0)
    n_tail, direction, tail_fn = _TAILS[cls]
    base = float(np.exp(rng.uniform(np.log(20.0), np.log(2000.0))))
    step = base * rng.uniform(0.003, 0.015)
    context = _context_bars(rng, window_len - n_tail, base, step, direction)
    tail = tail_fn(rng, context[-1].close, step)
    return Window(bars=_retime(context + tail), origin_index=0)


def generate_synthetic(
    cls: PatternClass, count: int, seed: int, window_len: int = DEFAULT_WINDOW
) -> list[tuple[Window, PatternClass]]:
    """Generate labeled windows whose label provably matches ``cls``.

    Candidates are drawn from the class's template (or a random walk for
    NONE) and resampled until :func:`label_window` agrees, so every returned
    pair is correct by construction. Deterministic for a given seed.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    if window_len < MIN_WINDOW:
        raise ValueError(f"window_len must be >= {MIN_WINDOW}")
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        window = _sample_window(rng, cls, window_len)
        if label_window(window) == cls:
            out.append((window, cls))
    return out


def generate_corpus(
    total: int, seed: int, window_len: int = DEFAULT_WINDOW
) -> list[tuple[Window, PatternClass]]:
    """Balanced corpus across all classes; earlier classes absorb the remainder."""
    if total < N_CLASSES:
        raise ValueError(f"need at least {N_CLASSES} windows for a balanced corpus")
    seeds = np.random.SeedSequence(seed).spawn(N_CLASSES)
    pairs = []
    per_class, remainder = divmod(total, N_CLASSES)
    for i, cls in enumerate(PatternClass):
        n = per_class + (1 if i < remainder else 0)
        child_seed = int(seeds[i].generate_state(1)[0])
        pairs.extend(generate_synthetic(cls, n, seed=child_seed, window_len=window_len))
    return pairs


# ---------------------------------------------------------------------------
# Corpus CSV round trip (flattened OHLC + class code)
# ---------------------------------------------------------------------------

def write_corpus_csv(pairs: list[tuple[Window, PatternClass]], path: str | Path) -> None:
    if not pairs:
        raise ValueError("empty corpus")
    w = len(pairs[0][0])
    header = ["class_code", "class_name"]
    for field in ("open", "high", "low", "close"):
        header.extend(f"{field}_{i}" for i in range(w))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for window, cls in pairs:
            row = [int(cls), cls.name.lower()]
            for values in (window.opens(), window.highs(), window.lows(), window.closes()):
                row.extend(repr(float(v)) for v in values)
            writer.writerow(row)


def read_corpus_csv(path: str | Path) -> list[tuple[Window, PatternClass]]:
    pairs = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "class_code":
            raise ValueError(f"{path}: not a corpus file")
        w = (len(header) - 2) // 4
        for row in reader:
            cls = PatternClass(int(row[0]))
            vals = [float(v) for v in row[2:]]
            opens, highs = vals[:w], vals[w : 2 * w]
            lows, closes = vals[2 * w : 3 * w], vals[3 * w :]
            bars = tuple(
                Candle(
                    timestamp=_BASE_TIMESTAMP + i * _BAR_SECONDS,
                    open=opens[i],
                    high=highs[i],
                    low=lows[i],
                    close=closes[i],
                    volume=0.0,
                )
                for i in range(w)
            )
            pairs.append((Window(bars=bars, origin_index=0), cls))
    return pairs
