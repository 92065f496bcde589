"""Trading environment mechanics: fills, clamping, rewards, accounting."""

import numpy as np
import pytest

from gaftrader.market_data import Candle, CandleSeries
from gaftrader.synthetic import constant_series, random_walk_series
from gaftrader.trading_env import Action, EnvConfig, EnvState, StepResult, TradingEnv


class StubModel:
    """Deterministic distribution provider for observation tests."""

    window = 10

    def __init__(self, n_windows):
        rng = np.random.default_rng(99)
        raw = rng.uniform(0.1, 1.0, size=(n_windows, 9))
        self.dists = raw / raw.sum(axis=1, keepdims=True)

    def predict_batch(self, tensors):
        return self.dists[: tensors.shape[0]]


def _series_with_prices(opens_closes):
    """Bars at 900s spacing with the given (open, close) pairs."""
    bars = []
    for i, (o, c) in enumerate(opens_closes):
        hi, lo = max(o, c) * 1.001, min(o, c) * 0.999
        bars.append(Candle(timestamp=900 * i, open=o, high=hi, low=lo, close=c, volume=1.0))
    return CandleSeries.from_bars(bars, bar_interval=900)


def _flat_then(open_w, close_w, n=12, w=10):
    """Constant prices through the window, then a specified fill bar."""
    pairs = [(100.0, 100.0)] * w
    pairs.append((open_w, close_w))
    pairs.extend([(close_w, close_w)] * (n - w - 1))
    return _series_with_prices(pairs)


def test_reset_state():
    env = TradingEnv(random_walk_series(30, seed=1), None, EnvConfig())
    state = env.reset()
    assert isinstance(state, EnvState)
    assert env.account.position == 0
    assert env.account.realized_pnl == 0.0
    assert env.equity == 10_000.0
    assert state.step_index == 0
    np.testing.assert_allclose(state.observation[:9].sum(), 1.0, atol=1e-12)


def test_reset_determinism():
    env = TradingEnv(random_walk_series(30, seed=1), None, EnvConfig())
    s1 = env.reset()
    env.step(Action.BUY)
    s2 = env.reset()
    np.testing.assert_array_equal(s1.observation, s2.observation)


def test_reset_observation_matches_model():
    series = random_walk_series(30, seed=2)
    stub = StubModel(20)
    env = TradingEnv(series, stub, EnvConfig())
    state = env.reset()
    np.testing.assert_array_equal(state.observation[:9], stub.dists[0])
    assert state.observation.size == 11
    assert -1.0 <= state.observation[9] <= 1.0
    assert -1.0 < state.observation[10] < 1.0


def test_strict_state_dimension():
    env = TradingEnv(random_walk_series(30, seed=2), None,
                     EnvConfig(augment_state=False))
    assert env.observation_dim == 9
    assert env.reset().observation.shape == (9,)


def test_flat_buy_mark_to_market():
    series = _flat_then(100.0, 101.0)
    env = TradingEnv(series, None, EnvConfig())
    env.reset()
    result = env.step(Action.BUY)
    assert env.account.position == 1
    assert result.reward == pytest.approx(1.0, abs=1e-12)
    assert env.equity == pytest.approx(10_001.0, abs=1e-12)


def test_buy_clamped_at_limit():
    series = random_walk_series(30, seed=7)
    env = TradingEnv(series, None, EnvConfig())
    env.reset()
    for _ in range(3):
        env.step(Action.BUY)
    assert env.account.position == 3
    closes = series.closes
    w = 10
    # step index 3 marks close[13] against close[12]
    expected = 3.0 * (closes[w + 3] - closes[w + 2])
    result = env.step(Action.BUY)
    assert env.account.position == 3
    assert result.reward == pytest.approx(expected, abs=1e-9)
    assert env.trace[-1].fill_price is None


def test_sell_clamped_at_short_limit():
    env = TradingEnv(random_walk_series(30, seed=8), None, EnvConfig())
    env.reset()
    for _ in range(5):
        env.step(Action.SELL)
    assert env.account.position == -3
    assert len(env.account.entry_prices) == 3


def test_hold_flat_zero_reward():
    env = TradingEnv(random_walk_series(30, seed=9), None, EnvConfig())
    env.reset()
    for _ in range(5):
        result = env.step(Action.HOLD)
        assert result.reward == 0.0
    assert env.equity == 10_000.0


def test_constant_series_zero_total_reward():
    series = constant_series(40)
    rng = np.random.default_rng(0)
    for _ in range(5):
        env = TradingEnv(series, None, EnvConfig())
        env.reset()
        total = 0.0
        done = False
        while not done:
            result = env.step(Action(int(rng.integers(3))))
            total += result.reward
            done = result.done
        assert total == pytest.approx(0.0, abs=1e-12)
        assert env.equity == pytest.approx(10_000.0, abs=1e-12)


def test_step_after_done_raises():
    env = TradingEnv(random_walk_series(12, seed=3), None, EnvConfig())
    env.reset()
    done = False
    while not done:
        done = env.step(Action.HOLD).done
    with pytest.raises(RuntimeError, match="done"):
        env.step(Action.HOLD)


def test_step_before_reset_raises():
    env = TradingEnv(random_walk_series(12, seed=3), None, EnvConfig())
    with pytest.raises(RuntimeError):
        env.step(Action.HOLD)


def test_accounting_conservation_random():
    rng = np.random.default_rng(12)
    for trial in range(50):
        series = random_walk_series(int(rng.integers(15, 50)),
                                    seed=int(rng.integers(1 << 30)),
                                    volatility=0.02)
        env = TradingEnv(series, None, EnvConfig())
        env.reset()
        total = 0.0
        done = False
        while not done:
            result = env.step(Action(int(rng.integers(3))))
            total += result.reward
            assert abs(env.account.position) <= 3
            assert len(env.account.entry_prices) == abs(env.account.position)
            done = result.done
        assert env.equity - 10_000.0 == pytest.approx(total, abs=1e-9)


def test_fees_charged_per_fill():
    series = _flat_then(100.0, 100.0)
    env = TradingEnv(series, None, EnvConfig(fee_per_unit=0.25))
    env.reset()
    env.step(Action.BUY)
    env.step(Action.SELL)
    assert env.account.realized_pnl == pytest.approx(-0.5, abs=1e-12)


def test_fifo_close_order():
    # buy at 100 and 110, sell once: the 100 entry must close first
    pairs = [(100.0, 100.0)] * 10 + [(100.0, 110.0), (110.0, 110.0), (120.0, 120.0), (120.0, 120.0)]
    series = _series_with_prices(pairs)
    env = TradingEnv(series, None, EnvConfig())
    env.reset()
    env.step(Action.BUY)   # fill 100
    env.step(Action.BUY)   # fill 110
    env.step(Action.SELL)  # fill 120, closes the 100 entry
    assert env.account.realized_pnl == pytest.approx(20.0)
    assert env.account.entry_prices == [110.0]


def test_trace_rows():
    env = TradingEnv(random_walk_series(14, seed=5), None, EnvConfig())
    env.reset()
    env.step(Action.BUY)
    env.step(Action.HOLD)
    rows = env.trace
    assert [r.action for r in rows] == ["buy", "hold"]
    assert rows[0].fill_price is not None
    assert rows[1].fill_price is None
    assert rows[0].position == 1
    assert isinstance(rows[0], type(rows[1]))
    assert all(isinstance(r.equity, float) for r in rows)


def test_trace_csv_export(tmp_path):
    from gaftrader.trading_env import write_trace_csv

    env = TradingEnv(random_walk_series(14, seed=5), None, EnvConfig())
    env.reset()
    env.step(Action.BUY)
    env.step(Action.HOLD)
    env.step(Action.SELL)
    path = tmp_path / "trace.csv"
    write_trace_csv(env.trace, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "step,timestamp,action,fill_price,position,reward,equity"
    assert len(lines) == 4
    hold_row = lines[2].split(",")
    assert hold_row[2] == "hold"
    assert hold_row[3] == ""  # no fill on hold
    assert float(lines[1].split(",")[6]) == env.trace[0].equity


def test_window_mismatch_rejected():
    stub = StubModel(20)
    with pytest.raises(ValueError, match="window"):
        TradingEnv(random_walk_series(30, seed=2), stub, EnvConfig(window=12))


def test_step_result_types():
    env = TradingEnv(random_walk_series(13, seed=5), None, EnvConfig())
    env.reset()
    result = env.step(Action.BUY)
    assert isinstance(result, StepResult)
    assert isinstance(result.state, EnvState)
    assert isinstance(result.reward, float)
    assert result.done in (True, False)
