"""Episodic trading environment over pattern-distribution observations.

Each step corresponds to one window of the underlying series: the agent sees
the classifier's pattern probabilities for window k (bars [k, k+W)), acts,
is filled at the open of bar k+W, and receives the mark-to-market equity
change with the position valued at that bar's close. Rewards therefore
telescope: their sum is exactly final equity minus initial equity.

Positions are whole units, hard-capped at +-3; a Buy at +3 or a Sell at -3
degrades to a Hold. Fills close opposite units first (FIFO) before opening
new ones. There are no fees by default; a per-unit fee is available for
robustness runs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from gaftrader.gaf import encode_windows
from gaftrader.market_data import CandleSeries, make_windows

POSITION_LIMIT = 3


class Action(IntEnum):
    BUY = 0
    SELL = 1
    HOLD = 2


@dataclass
class EnvConfig:
    window: int = 10
    initial_equity: float = 10_000.0
    fee_per_unit: float = 0.0
    augment_state: bool = True
    # Scale inside tanh for the unrealized-return feature; 25 maps a 2%
    # per-unit move to ~0.46 and saturates around +-8%.
    unrealized_scale: float = 25.0
    gap_policy: str = "exclude"


@dataclass
class AccountState:
    """Open position book; entry_prices has exactly |position| entries (FIFO)."""

    position: int = 0
    entry_prices: list[float] = field(default_factory=list)
    realized_pnl: float = 0.0

    def unrealized(self, mark_price: float) -> float:
        if self.position > 0:
            return float(sum(mark_price - e for e in self.entry_prices))
        if self.position < 0:
            return float(sum(e - mark_price for e in self.entry_prices))
        return 0.0


@dataclass
class EnvState:
    observation: np.ndarray
    step_index: int


@dataclass
class StepResult:
    state: EnvState
    reward: float
    done: bool


@dataclass
class TraceRow:
    step: int
    timestamp: int
    action: str
    fill_price: float | None
    position: int
    reward: float
    equity: float


class TradingEnv:
    """Single-threaded, deterministic environment over one series.

    ``pattern_model`` must expose ``window`` and ``predict_batch``; pass
    ``None`` to run with a uniform pattern distribution (useful for
    accounting tests that do not care about observations).
    """

    def __init__(self, series: CandleSeries, pattern_model=None,
                 config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        if pattern_model is not None and pattern_model.window != self.config.window:
            raise ValueError(
                f"pattern model window {pattern_model.window} != env window "
                f"{self.config.window}"
            )
        self.series = series
        w = self.config.window
        self._windows = make_windows(series, w, gap_policy=self.config.gap_policy)
        if pattern_model is None:
            n_classes = 9
            self._distributions = np.full((len(self._windows), n_classes), 1.0 / n_classes)
        else:
            self._distributions = pattern_model.predict_batch(encode_windows(self._windows))
        bars = series.bars
        origins = [win.origin_index for win in self._windows]
        self._fill_open = np.array([bars[k + w].open for k in origins])
        self._mark_close = np.array([bars[k + w].close for k in origins])
        self._prev_close = np.array([bars[k + w - 1].close for k in origins])
        self.mark_timestamps = np.array([bars[k + w].timestamp for k in origins], dtype=np.int64)
        self.reset_timestamp = int(bars[w - 1].timestamp)
        self._step_index = 0
        self._done = True  # force reset() before stepping
        self._account = AccountState()
        self._equity = self.config.initial_equity
        self.trace: list[TraceRow] = []

    @property
    def n_steps(self) -> int:
        return len(self._windows)

    @property
    def observation_dim(self) -> int:
        base = self._distributions.shape[1]
        return base + 2 if self.config.augment_state else base

    @property
    def equity(self) -> float:
        return self._equity

    @property
    def account(self) -> AccountState:
        return self._account

    def _observe(self, step_index: int) -> np.ndarray:
        dist_index = min(step_index, len(self._windows) - 1)
        dist = self._distributions[dist_index]
        if not self.config.augment_state:
            return dist.copy()
        mark = self._mark_close[step_index - 1] if step_index > 0 else self._prev_close[0]
        pos = self._account.position
        if pos != 0:
            per_unit_return = self._account.unrealized(mark) / abs(pos) / mark
        else:
            per_unit_return = 0.0
        features = np.array([
            pos / POSITION_LIMIT,
            np.tanh(self.config.unrealized_scale * per_unit_return),
        ])
        return np.concatenate([dist, features])

    def reset(self) -> EnvState:
        self._step_index = 0
        self._done = False
        self._account = AccountState()
        self._equity = self.config.initial_equity
        self.trace = []
        return EnvState(observation=self._observe(0), step_index=0)

    def _fill(self, action: Action, price: float) -> float | None:
        acct = self._account
        if action == Action.BUY:
            if acct.position >= POSITION_LIMIT:
                return None
            if acct.position < 0:
                entry = acct.entry_prices.pop(0)
                acct.realized_pnl += entry - price
            else:
                acct.entry_prices.append(price)
            acct.position += 1
        elif action == Action.SELL:
            if acct.position <= -POSITION_LIMIT:
                return None
            if acct.position > 0:
                entry = acct.entry_prices.pop(0)
                acct.realized_pnl += price - entry
            else:
                acct.entry_prices.append(price)
            acct.position -= 1
        else:
            return None
        acct.realized_pnl -= self.config.fee_per_unit
        return price

    def step(self, action: Action | int) -> StepResult:
        if self._done:
            raise RuntimeError("episode is done; call reset() before stepping")
        action = Action(action)
        i = self._step_index
        fill_price = self._fill(action, float(self._fill_open[i])) if action != Action.HOLD else None

        acct = self._account
        new_equity = (
            self.config.initial_equity
            + acct.realized_pnl
            + acct.unrealized(float(self._mark_close[i]))
        )
        reward = new_equity - self._equity
        self._equity = new_equity
        self._step_index += 1
        self._done = self._step_index >= len(self._windows)
        self.trace.append(
            TraceRow(
                step=i,
                timestamp=int(self.mark_timestamps[i]),
                action=action.name.lower(),
                fill_price=fill_price,
                position=acct.position,
                reward=reward,
                equity=new_equity,
            )
        )
        return StepResult(
            state=EnvState(observation=self._observe(self._step_index),
                           step_index=self._step_index),
            reward=reward,
            done=self._done,
        )


def write_trace_csv(trace: list[TraceRow], path: str | Path) -> None:
    """Export a full episode trace (fills and holds alike) for inspection."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "timestamp", "action", "fill_price", "position",
                         "reward", "equity"])
        for r in trace:
            fill = "" if r.fill_price is None else repr(float(r.fill_price))
            writer.writerow([r.step, r.timestamp, r.action, fill, r.position,
                             repr(float(r.reward)), repr(float(r.equity))])
