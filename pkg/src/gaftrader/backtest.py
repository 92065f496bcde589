"""Backtest orchestration, performance metrics, and report files.

A backtest is a greedy policy rollout through :class:`TradingEnv`. The
report is fully self-describing: every metric can be recomputed from the
exported equity curve and trade log alone, which the ``report`` CLI
subcommand (and the test suite) exploits as a consistency oracle.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gaftrader.config import ConfigError
from gaftrader.market_data import CandleSeries
from gaftrader.trading_env import Action, EnvConfig, TradingEnv

logger = logging.getLogger(__name__)

SECONDS_PER_WEEK = 7 * 24 * 3600


@dataclass
class Metrics:
    total_return_pct: float
    max_drawdown_pct: float
    trade_count: int
    trades_per_week: float
    win_rate: float
    initial_equity: float
    final_equity: float
    n_steps: int
    bar_interval: int


@dataclass
class TradeRow:
    step: int
    timestamp: int
    action: str
    fill_price: float
    position: int


@dataclass
class BacktestReport:
    equity_curve: np.ndarray       # length n_steps + 1, starts at initial equity
    curve_timestamps: np.ndarray   # aligned with the curve
    trades: list[TradeRow]
    metrics: Metrics
    provenance: dict = field(default_factory=dict)


def compute_metrics(equity_curve: np.ndarray, trades: list[TradeRow],
                    bar_interval: int) -> Metrics:
    """Metrics from the exported artifacts only (no hidden environment state).

    Win rate replays the trade log as a FIFO unit book: a closed unit with
    positive realized PnL counts as a win. Trade count is the number of
    fills.
    """
    curve = np.asarray(equity_curve, dtype=np.float64)
    if curve.size < 2:
        raise ValueError("equity curve needs at least 2 points")
    initial, final = float(curve[0]), float(curve[-1])
    total_return = (final - initial) / initial

    peak = float(curve[0])
    max_dd = 0.0
    for value in curve[1:]:
        peak = max(peak, float(value))
        if peak > 0:
            max_dd = max(max_dd, (peak - float(value)) / peak)

    pnls = _closed_unit_pnls(trades)
    wins = sum(1 for p in pnls if p > 0)
    n_steps = curve.size - 1
    duration_weeks = n_steps * bar_interval / SECONDS_PER_WEEK
    return Metrics(
        total_return_pct=100.0 * total_return,
        max_drawdown_pct=100.0 * max_dd,
        trade_count=len(trades),
        trades_per_week=len(trades) / duration_weeks if duration_weeks > 0 else 0.0,
        win_rate=wins / len(pnls) if pnls else 0.0,
        initial_equity=initial,
        final_equity=final,
        n_steps=n_steps,
        bar_interval=int(bar_interval),
    )


def _closed_unit_pnls(trades: list[TradeRow]) -> list[float]:
    book: list[tuple[str, float]] = []
    pnls = []
    for row in trades:
        if row.action == "buy":
            if book and book[0][0] == "short":
                _, entry = book.pop(0)
                pnls.append(entry - row.fill_price)
            else:
                book.append(("long", row.fill_price))
        elif row.action == "sell":
            if book and book[0][0] == "long":
                _, entry = book.pop(0)
                pnls.append(row.fill_price - entry)
            else:
                book.append(("short", row.fill_price))
    return pnls


def rollout(env: TradingEnv, policy, rng: np.random.Generator | None = None):
    """Run one full episode; ``policy`` maps an observation to an action.

    Returns (total reward, equity curve, trades). With ``rng`` given the
    policy is called as policy(obs, rng) to allow stochastic evaluation.
    """
    state = env.reset()
    curve = [env.equity]
    total = 0.0
    done = False
    while not done:
        obs = state.observation
        action = policy(obs, rng) if rng is not None else policy(obs)
        result = env.step(Action(action))
        curve.append(env.equity)
        total += result.reward
        state = result.state
        done = result.done
    trades = [
        TradeRow(step=r.step, timestamp=r.timestamp, action=r.action,
                 fill_price=r.fill_price, position=r.position)
        for r in env.trace
        if r.fill_price is not None
    ]
    return total, np.array(curve), trades


def check_disjoint_ranges(train_range: tuple[int, int] | None, series: CandleSeries,
                          allow_overlap: bool = False) -> None:
    """Reject evaluation data whose date range overlaps the training range."""
    if train_range is None:
        return
    t0, t1 = train_range
    overlap = series.start_timestamp <= t1 and t0 <= series.end_timestamp
    if overlap and not allow_overlap:
        raise ConfigError(
            f"evaluation range [{series.start_timestamp}, {series.end_timestamp}] "
            f"overlaps the agent's training range [{t0}, {t1}]; pass "
            f"--allow-overlap to override"
        )
    if overlap:
        logger.warning("evaluation range overlaps the training range (override active)")


def run_backtest(series: CandleSeries, pattern_model, agent, *,
                 env_config: EnvConfig | None = None,
                 sampled: bool = False,
                 provenance: dict | None = None) -> BacktestReport:
    """Deterministic greedy rollout of a trained agent over a series."""
    env = TradingEnv(series, pattern_model, env_config)
    if sampled:
        policy = lambda obs: agent.act(obs)[0]
    else:
        policy = agent.act_greedy
    _, curve, trades = rollout(env, policy)
    metrics = compute_metrics(curve, trades, series.bar_interval)
    timestamps = np.concatenate(
        [[env.reset_timestamp], env.mark_timestamps[: curve.size - 1]]
    )
    return BacktestReport(
        equity_curve=curve,
        curve_timestamps=timestamps,
        trades=trades,
        metrics=metrics,
        provenance=provenance or {},
    )


def transfer_eval(series: CandleSeries, pattern_model, agent, *,
                  env_config: EnvConfig | None = None,
                  provenance: dict | None = None) -> BacktestReport:
    """Apply a trained pipeline unchanged to a different asset's series."""
    tagged = {"mode": "transfer-eval"}
    tagged.update(provenance or {})
    return run_backtest(series, pattern_model, agent,
                        env_config=env_config, provenance=tagged)


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def write_report(report: BacktestReport, out_dir: str | Path) -> None:
    """Write report.csv, equity.csv, trades.csv, and equity.svg."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "equity.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "timestamp", "equity"])
        for i, (ts, eq) in enumerate(zip(report.curve_timestamps, report.equity_curve)):
            writer.writerow([i, int(ts), repr(float(eq))])
    with (out / "trades.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "timestamp", "action", "fill_price", "position"])
        for t in report.trades:
            writer.writerow([t.step, t.timestamp, t.action, repr(float(t.fill_price)), t.position])
    with (out / "report.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        for k in sorted(report.provenance):
            writer.writerow([k, report.provenance[k]])
        m = report.metrics
        writer.writerow(["total_return_pct", repr(m.total_return_pct)])
        writer.writerow(["max_drawdown_pct", repr(m.max_drawdown_pct)])
        writer.writerow(["trade_count", m.trade_count])
        writer.writerow(["trades_per_week", repr(m.trades_per_week)])
        writer.writerow(["win_rate", repr(m.win_rate)])
        writer.writerow(["initial_equity", repr(m.initial_equity)])
        writer.writerow(["final_equity", repr(m.final_equity)])
        writer.writerow(["n_steps", m.n_steps])
        writer.writerow(["bar_interval", m.bar_interval])
    _plot_equity(report, out / "equity.svg")


def _plot_equity(report: BacktestReport, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "gaftrader"
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(report.equity_curve, lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("equity")
    ax.set_title("equity curve")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def read_equity_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    steps, timestamps, equity = [], [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            steps.append(int(row["step"]))
            timestamps.append(int(row["timestamp"]))
            equity.append(float(row["equity"]))
    if len(equity) < 2:
        raise ValueError(f"{path}: equity curve needs at least 2 rows")
    return np.array(equity), np.array(timestamps, dtype=np.int64)


def read_trades_csv(path: str | Path) -> list[TradeRow]:
    trades = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            trades.append(
                TradeRow(step=int(row["step"]), timestamp=int(row["timestamp"]),
                         action=row["action"], fill_price=float(row["fill_price"]),
                         position=int(row["position"]))
            )
    return trades


def recompute_metrics_from_files(out_dir: str | Path) -> Metrics:
    """Metrics from the exported files alone; the self-consistency oracle."""
    out = Path(out_dir)
    curve, timestamps = read_equity_csv(out / "equity.csv")
    trades = read_trades_csv(out / "trades.csv")
    deltas = np.diff(timestamps)
    bar_interval = int(np.min(deltas)) if deltas.size else 0
    return compute_metrics(curve, trades, bar_interval)
