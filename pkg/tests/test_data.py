import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenario_gan import data
from scenario_gan.errors import ConfigError, DataError
from scenario_gan.metrics import autocorrelation


def make_series(values, step_minutes=5, start="2007-01-01T00:00:00", forecast=None, capacity=1.0):
    stamps = np.datetime64(start, "s") + np.arange(len(values)) * np.timedelta64(step_minutes * 60, "s")
    return data.PowerSeries(stamps, np.asarray(values, dtype=float), forecast, capacity)


def test_load_three_rows(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("timestamp,power\n2007-01-01T00:00,1\n2007-01-01T00:05,2\n2007-01-01T00:10,3\n")
    s = data.load_csv(path, capacity=16)
    assert len(s) == 3
    assert s.capacity == 16
    assert s.step == np.timedelta64(300, "s")


def test_load_gap_names_row(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("timestamp,power\n2007-01-01T00:00,1\n2007-01-01T00:05,2\n2007-01-01T00:15,3\n")
    with pytest.raises(DataError, match="row 2"):
        data.load_csv(path)


@pytest.mark.parametrize("body,match", [
    ("timestamp,value\n2007-01-01T00:00,1\n", "missing"),
    ("timestamp,power\n", "no data"),
    ("timestamp,power\n2007-01-01T00:00,abc\n", "row 0"),
    ("timestamp,power\nnot-a-date,1\n", "bad timestamp"),
    ("timestamp,power\n2007-01-01T00:00,-1\n", "negative"),
    ("timestamp,power\n2007-01-01T00:00,nan\n", "non-finite"),
])
def test_load_rejects_malformed(tmp_path, body, match):
    path = tmp_path / "s.csv"
    path.write_text(body)
    with pytest.raises(DataError, match=match):
        data.load_csv(path)


def test_save_load_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    s = make_series(rng.uniform(0, 1, 50), forecast=rng.uniform(0, 1, 50))
    path = tmp_path / "s.csv"
    data.save_csv(s, path)
    back = data.load_csv(path)
    assert back.power.tobytes() == s.power.tobytes()
    assert back.forecast.tobytes() == s.forecast.tobytes()
    np.testing.assert_array_equal(back.timestamps, s.timestamps)


def test_normalize_capacity():
    s = make_series([8.0, 16.0, 0.0], capacity=16)
    n = data.normalize(s)
    np.testing.assert_array_equal(n.power, [0.5, 1.0, 0.0])
    assert n.capacity == 1.0


def test_normalize_zero_series():
    np.testing.assert_array_equal(data.normalize(make_series([0.0] * 4, capacity=3)).power, 0.0)


def test_normalize_rejects_out_of_range():
    with pytest.raises(DataError, match="row 1"):
        data.normalize(make_series([1.0, 17.0], capacity=16))
    with pytest.raises(DataError, match="forecast"):
        data.normalize(make_series([1.0, 2.0], forecast=np.array([1.0, 20.0]), capacity=16))


def test_window_counts():
    s = make_series(np.arange(5) / 10)
    ws = data.window(s, 1, 3)
    assert len(ws) == 1
    ws = data.window(make_series(np.arange(6) / 10), 1, 3)
    assert len(ws) == 2
    assert ws[1].start == ws[0].start + 1
    np.testing.assert_array_equal(ws[1].values, np.arange(1, 6) / 10)


def test_window_too_short_and_bad_args():
    with pytest.raises(DataError):
        data.window(make_series([0.1, 0.2]), 1, 3)
    with pytest.raises(ConfigError):
        data.window(make_series([0.1] * 10), 1, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(5, 80), st.integers(0, 5), st.integers(1, 5), st.integers(1, 4))
def test_window_partition(n, h, k, stride):
    values = np.arange(n) / n
    if n < h + k + 1:
        with pytest.raises(DataError):
            data.window(make_series(values), h, k, stride)
        return
    ws = data.window(make_series(values), h, k, stride)
    assert len(ws) == (n - h - k - 1) // stride + 1
    for w in ws:
        np.testing.assert_array_equal(np.concatenate([w.history, w.horizon]), w.values)
        assert len(w.history) == h + 1 and len(w.horizon) == k
        assert w.origin == w.timestamps[h]


def test_window_carries_forecast_horizon():
    s = make_series(np.arange(6) / 10, forecast=np.arange(6) / 20)
    w = data.window(s, 1, 3)[0]
    np.testing.assert_array_equal(w.forecast, np.arange(2, 5) / 20)


def test_day_windows_start_at_midnight():
    s = make_series(np.full(288 * 3 + 10, 0.3), start="2007-01-01T23:00:00")
    ws = data.day_windows(s, 5, 6)
    assert len(ws) == 3
    for w in ws:
        t0 = w.timestamps[0]
        assert t0 == t0.astype("datetime64[D]")


def test_split_ten_days():
    s = make_series(np.full(288 * 10, 0.3), step_minutes=5)
    ws = data.window(s, 1, 2, stride=12)
    train, test = data.split_by_day(ws, 0.9, seed=0, drop_crossing=False)
    train_days = {w.origin.astype("datetime64[D]") for w in train}
    test_days = {w.origin.astype("datetime64[D]") for w in test}
    assert len(train_days) == 9 and len(test_days) == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 20), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_partition_by_day(n_days, ratio, seed):
    s = make_series(np.full(24 * n_days, 0.5), step_minutes=60)
    ws = data.window(s, 2, 3)
    train, test = data.split_by_day(ws, ratio, seed=seed, drop_crossing=False)
    assert len(train) + len(test) == len(ws)
    assert {id(w) for w in train}.isdisjoint({id(w) for w in test})
    train_days = {w.origin.astype("datetime64[D]") for w in train}
    test_days = {w.origin.astype("datetime64[D]") for w in test}
    assert train_days.isdisjoint(test_days)
    assert train and test


def test_split_drops_straddling_windows():
    s = make_series(np.full(24 * 6, 0.5), step_minutes=60)
    ws = data.window(s, 2, 3)
    train, test = data.split_by_day(ws, 0.5, seed=1)
    train_days = {w.origin.astype("datetime64[D]") for w in train}
    for w in test:
        assert not set(w.days()) & train_days
    for w in train:
        assert set(w.days()) <= train_days


def test_split_is_seeded():
    ws = data.window(make_series(np.full(24 * 8, 0.5), step_minutes=60), 2, 3)
    a = data.split_by_day(ws, 0.7, seed=3)
    b = data.split_by_day(ws, 0.7, seed=3)
    assert [w.start for w in a[0]] == [w.start for w in b[0]]


def test_split_errors():
    ws = data.window(make_series(np.full(10, 0.5)), 1, 2)
    with pytest.raises(DataError):
        data.split_by_day(ws)
    with pytest.raises(ConfigError):
        data.split_by_day(ws, ratio=1.0)


def test_synth_constant_when_noise_free():
    s = data.synth_generate(data.SyntheticConfig(noise_std=0.0, amplitude=0.0, length=100))
    np.testing.assert_array_equal(s.power, 0.5)


def test_synth_ar1_lag_one():
    cfg = data.SyntheticConfig(rho=0.9, amplitude=0.0, noise_std=0.01, length=100_000, clip=False, seed=1)
    r1 = autocorrelation(data.synth_generate(cfg).power, 1).values[1]
    assert 0.87 <= r1 <= 0.93


def test_synth_deterministic_and_in_range():
    cfg = data.SyntheticConfig(length=2000, seed=4)
    a, b = data.synth_generate(cfg), data.synth_generate(cfg)
    assert a.power.tobytes() == b.power.tobytes()
    assert a.power.min() >= 0 and a.power.max() <= 1


def test_synth_config_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"rho": 0.5, "length": 30}')
    cfg = data.SyntheticConfig.from_json(path)
    assert cfg.rho == 0.5 and cfg.length == 30
    path.write_text('{"rhoo": 0.5}')
    with pytest.raises(ConfigError):
        data.SyntheticConfig.from_json(path)
    with pytest.raises(ConfigError):
        data.synth_generate(data.SyntheticConfig(rho=1.0))


def test_persistence():
    np.testing.assert_array_equal(data.persistence_forecast([0.1, 0.4], 1, 3), [0.4, 0.4, 0.4])
    with pytest.raises(DataError):
        data.persistence_forecast([0.1], 3, 2)


def test_persistence_zero_then_floor():
    from scenario_gan.forecaster import apply_forecast_floor, interval_bounds
    p = apply_forecast_floor(data.persistence_forecast([0.2, 0.0], 1, 2))
    b = interval_bounds(p, 2.0)
    np.testing.assert_allclose(b.lower, 5e-4)
    np.testing.assert_allclose(b.upper, 2e-3)
