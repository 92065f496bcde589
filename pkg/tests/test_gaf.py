"""Angular-field encoding: scaling, analytic cases, and invariants."""

import numpy as np
import pytest

from gaftrader.gaf import CHANNELS, encode_gaf, encode_window, encode_windows, minmax_scale
from gaftrader.market_data import Candle, Window


def test_minmax_endpoints():
    np.testing.assert_allclose(minmax_scale([2, 4, 6]), [0.0, 0.5, 1.0], rtol=0, atol=0)


def test_minmax_constant_maps_to_half():
    np.testing.assert_array_equal(minmax_scale([5, 5, 5]), [0.5, 0.5, 0.5])


def test_minmax_rejects_non_finite():
    with pytest.raises(ValueError):
        minmax_scale([1.0, float("nan")])
    with pytest.raises(ValueError):
        minmax_scale([1.0, float("inf")])


def test_minmax_range_property():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        x = rng.uniform(-50, 50, size=10)
        scaled = minmax_scale(x)
        assert scaled.min() == 0.0
        assert scaled.max() == 1.0
        assert np.all((scaled >= 0.0) & (scaled <= 1.0))


def test_encode_unit_pair():
    m = encode_gaf([0.0, 1.0])
    # phi = [pi/2, 0]; the +-1 entries are exact, the zeros are cos(fl(pi/2)),
    # one ulp from zero at double precision.
    assert m[0, 0] == -1.0
    assert m[1, 1] == 1.0
    assert abs(m[0, 1]) < 1e-15
    assert abs(m[1, 0]) < 1e-15


def test_encode_constant_series():
    m = encode_gaf([5.0, 5.0, 5.0])
    np.testing.assert_allclose(m, -0.5, rtol=0, atol=1e-15)


def test_encode_matches_trig_identity():
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 10, size=16)
    m = encode_gaf(x)
    phi = np.arccos(minmax_scale(x))
    oracle = np.cos(phi)[:, None] * np.cos(phi)[None, :] - np.sin(phi)[:, None] * np.sin(phi)[None, :]
    assert np.max(np.abs(m - oracle)) < 1e-12


def test_encode_requires_two_points():
    with pytest.raises(ValueError):
        encode_gaf([1.0])


def test_matrix_invariants_random():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        x = rng.uniform(-100, 100, size=int(rng.integers(2, 24)))
        m = encode_gaf(x)
        assert np.array_equal(m, m.T)
        assert np.all(m >= -1.0) and np.all(m <= 1.0)
        phi = np.arccos(minmax_scale(x))
        np.testing.assert_allclose(np.diag(m), np.cos(2 * phi), rtol=0, atol=1e-12)


def test_affine_invariance():
    rng = np.random.default_rng(3)
    for _ in range(100):
        x = rng.uniform(-5, 5, size=12)
        a = rng.uniform(0.1, 10)
        b = rng.uniform(-100, 100)
        np.testing.assert_allclose(encode_gaf(a * x + b), encode_gaf(x), rtol=0, atol=1e-12)


def test_monotone_input_gives_monotone_angles():
    x = np.sort(np.random.default_rng(1).uniform(0, 10, size=15))
    phi = np.arccos(minmax_scale(x))
    assert np.all(np.diff(phi) <= 0)


def _window_from_series(opens, highs, lows, closes):
    bars = tuple(
        Candle(timestamp=900 * i, open=o, high=h, low=l, close=c, volume=1.0)
        for i, (o, h, l, c) in enumerate(zip(opens, highs, lows, closes))
    )
    return Window(bars=bars, origin_index=0)


def test_encode_window_identical_series():
    vals = [10.0, 11.0, 10.5, 12.0, 11.5]
    w = _window_from_series(vals, vals, vals, vals)
    t = encode_window(w)
    assert t.shape == (5, 5, 4)
    for c in range(1, 4):
        np.testing.assert_array_equal(t[:, :, c], t[:, :, 0])


def test_encode_window_rising_close_corner():
    n = 10
    closes = [100.0 + i for i in range(n)]
    opens = [c - 0.2 for c in closes]
    highs = [c + 0.3 for c in closes]
    lows = [o - 0.3 for o in opens]
    w = _window_from_series(opens, highs, lows, closes)
    t = encode_window(w)
    close_channel = t[:, :, CHANNELS.index("close")]
    # first close maps to phi=pi/2, last to phi=0: cos(pi/2 + 0) ~ 0
    assert abs(close_channel[0, n - 1]) < 1e-15


def test_encode_window_compositional():
    rng = np.random.default_rng(9)
    closes = rng.uniform(90, 110, size=10)
    opens = closes + rng.uniform(-1, 1, size=10)
    highs = np.maximum(opens, closes) + rng.uniform(0, 1, size=10)
    lows = np.minimum(opens, closes) - rng.uniform(0, 1, size=10)
    w = _window_from_series(opens, highs, lows, closes)
    t = encode_window(w)
    np.testing.assert_array_equal(t[:, :, 0], encode_gaf(opens))
    np.testing.assert_array_equal(t[:, :, 1], encode_gaf(highs))
    np.testing.assert_array_equal(t[:, :, 2], encode_gaf(lows))
    np.testing.assert_array_equal(t[:, :, 3], encode_gaf(closes))


def test_encode_windows_stacks():
    rng = np.random.default_rng(2)
    windows = []
    for _ in range(3):
        closes = rng.uniform(90, 110, size=10)
        windows.append(_window_from_series(closes, closes + 1, closes - 1, closes))
    batch = encode_windows(windows)
    assert batch.shape == (3, 10, 10, 4)
    np.testing.assert_array_equal(batch[1], encode_window(windows[1]))
