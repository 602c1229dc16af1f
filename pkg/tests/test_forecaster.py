import numpy as np
import pytest

from hmgsim import forecaster as fc


@pytest.fixture(scope="module")
def series():
    return fc.generate_load(fc.SyntheticLoadConfig(days=30))


def test_generator_deterministic():
    a = fc.generate_load(fc.SyntheticLoadConfig(days=10, seed=5))
    b = fc.generate_load(fc.SyntheticLoadConfig(days=10, seed=5))
    c = fc.generate_load(fc.SyntheticLoadConfig(days=10, seed=6))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.min() > 0


def test_windows_shapes_and_features(series):
    x, y = fc.build_windows(series[:100], 14, series.min(), series.max())
    assert x.shape == (86, 14, 8)
    assert y.shape == (86,)
    # one-hot day of week occupies the trailing 7 features
    assert np.allclose(x[:, :, 1:].sum(axis=2), 1.0)
    # the load channel is the scaled series
    span = series.max() - series.min()
    assert x[0, 0, 0] == pytest.approx((series[0] - series.min()) / span)


def test_windows_reject_short_series():
    with pytest.raises(ValueError, match="window"):
        fc.build_windows(np.ones(10), 14, 0.0, 1.0)


def test_train_deterministic(series):
    cfg = fc.TrainingConfig(epochs=3, seed=42, hidden=8)
    r1 = fc.train(series, cfg)
    r2 = fc.train(series, cfg)
    assert r1.loss_history == r2.loss_history
    p1, _ = fc.predict_series(r1.model, series[-200:])
    p2, _ = fc.predict_series(r2.model, series[-200:])
    assert np.array_equal(p1, p2)


def test_zero_learning_rate_freezes_loss(series):
    cfg = fc.TrainingConfig(epochs=3, learning_rate=0.0, seed=1, hidden=8,
                            dropout_rate=0.0)
    result = fc.train(series, cfg)
    assert result.loss_history[0] == pytest.approx(result.loss_history[-1], rel=1e-9)


def test_training_converges_on_sinusoid():
    daily = fc.generate_load(fc.SyntheticLoadConfig(days=60, noise_sigma=0.0,
                                                    weekly_amplitude=0.0))
    cfg = fc.TrainingConfig(epochs=12, seed=0, hidden=16, dropout_rate=0.0)
    result = fc.train(daily, cfg)
    assert result.loss_history[-1] < 0.1 * result.loss_history[0]


def test_evaluation_is_dropout_free(series):
    cfg = fc.TrainingConfig(epochs=2, seed=3, hidden=8, dropout_rate=0.5)
    result = fc.train(series, cfg)
    p1, _ = fc.predict_series(result.model, series[-100:])
    p2, _ = fc.predict_series(result.model, series[-100:])
    assert np.array_equal(p1, p2)


def test_metrics_hand_values():
    m = fc.metrics([110.0, 180.0], [100.0, 200.0])
    assert m["mape_pct"] == pytest.approx(10.0)
    assert m["mae_kw"] == pytest.approx(15.0)
    assert m["rmse_kw"] == pytest.approx(np.sqrt(250.0), abs=1e-9)
    assert m["rmse_kw"] == pytest.approx(15.8114, abs=1e-4)


def test_metrics_perfect_prediction():
    m = fc.metrics([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert (m["mape_pct"], m["mae_kw"], m["rmse_kw"]) == (0.0, 0.0, 0.0)


def test_metrics_constant_offset():
    actual = np.array([50.0, 60.0, 70.0])
    m = fc.metrics(actual + 4.0, actual)
    assert m["mae_kw"] == pytest.approx(4.0)


def test_metrics_zero_actual_excluded_from_mape():
    m = fc.metrics([10.0, 5.0], [0.0, 10.0])
    assert m["mape_pct"] == pytest.approx(50.0)  # only the nonzero sample counts
    assert m["mae_kw"] == pytest.approx(7.5)     # MAE still uses both


def test_metrics_length_mismatch():
    with pytest.raises(ValueError):
        fc.metrics([1.0], [1.0, 2.0])


def test_checkpoint_roundtrip(tmp_path, series):
    cfg = fc.TrainingConfig(epochs=2, seed=4, hidden=8)
    result = fc.train(series, cfg)
    path = tmp_path / "model.json"
    fc.save_model(result.model, path)
    loaded = fc.load_model(path)
    p1, _ = fc.predict_series(result.model, series[-150:])
    p2, _ = fc.predict_series(loaded, series[-150:])
    assert np.allclose(p1, p2, atol=1e-12)
    assert loaded.load_min == result.model.load_min


def test_checkpoint_version_guard(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"version": 99}')
    with pytest.raises(ValueError, match="version"):
        fc.load_model(path)


def test_train_rejects_short_series():
    with pytest.raises(ValueError):
        fc.train(np.ones(10), fc.TrainingConfig(epochs=1))


def test_load_series_csv(tmp_path):
    path = tmp_path / "load.csv"
    path.write_text("timestamp,load_kw\n2020-01-01T00:00,50.5\n2020-01-01T01:00,60\n")
    assert np.array_equal(fc.load_series_csv(path), [50.5, 60.0])
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        fc.load_series_csv(bad)


def test_mlp_baseline_trains(series):
    cfg = fc.TrainingConfig(epochs=3, seed=0)
    baseline, hist = fc.train_mlp_baseline(series, cfg)
    assert hist[-1] < hist[0]
    pred, actual = fc.predict_mlp(baseline, series[-200:])
    assert pred.shape == actual.shape
