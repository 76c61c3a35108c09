import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from greenmesh import forecast as fc
from greenmesh.forecast import LstmWeights, TrainConfig


def scalar_lstm(w: LstmWeights, window):
    """Plain-Python cell recurrence, gate order (input, forget, output, candidate)."""
    H = w.hidden_size
    sig = lambda z: 1.0 / (1.0 + math.exp(-z))
    h = [0.0] * H
    c = [0.0] * H
    for x in window:
        z = [w.W_x[k] * x + sum(w.W_h[k][j] * h[j] for j in range(H)) + w.b[k] for k in range(4 * H)]
        i = [sig(z[k]) for k in range(H)]
        f = [sig(z[H + k]) for k in range(H)]
        o = [sig(z[2 * H + k]) for k in range(H)]
        g = [math.tanh(z[3 * H + k]) for k in range(H)]
        c = [f[k] * c[k] + i[k] * g[k] for k in range(H)]
        h = [o[k] * math.tanh(c[k]) for k in range(H)]
    return sum(w.w_out[k] * h[k] for k in range(H)) + w.b_out[0]


def test_zero_network_outputs_bias():
    w = LstmWeights.zeros(5)
    w.b_out[0] = 0.37
    assert fc.lstm_forward(w, [0.3, 0.9, 0.1])[0] == 0.37


def test_forward_deterministic():
    w = LstmWeights.init(6, seed=2)
    assert fc.lstm_forward(w, [0.1, 0.2, 0.3])[0] == fc.lstm_forward(w, [0.1, 0.2, 0.3])[0]


def test_forward_matches_scalar_recurrence():
    w = LstmWeights.init(3, seed=4, scale=0.8)
    assert fc.lstm_forward(w, [0.2, 0.4])[0] == pytest.approx(scalar_lstm(w, [0.2, 0.4]), abs=1e-12)


@given(st.integers(0, 10_000), st.lists(st.floats(0, 1), min_size=1, max_size=8))
def test_forward_matches_scalar_random(seed, window):
    w = LstmWeights.init(3, seed=seed, scale=1.0)
    assert fc.lstm_forward(w, window)[0] == pytest.approx(scalar_lstm(w, window), abs=1e-10)


def _batch(seed, B=3, W=5):
    rng = np.random.default_rng(seed)
    return rng.random((B, W)), rng.random(B)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_check_every_parameter(seed):
    w = LstmWeights.init(3, seed=seed, scale=0.5)
    X, y = _batch(seed)
    grads = fc.bptt_gradients(w, (X, y))
    eps = 1e-5
    worst = 0.0
    for name, arr in w.params().items():
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + eps
            up = fc.batch_loss(w, X, y)
            flat[k] = old - eps
            down = fc.batch_loss(w, X, y)
            flat[k] = old
            num = (up - down) / (2 * eps)
            rel = abs(num - g[k]) / max(abs(num), abs(g[k]), 1e-7)
            worst = max(worst, rel)
    assert worst < 1e-4


def test_zero_error_batch_has_zero_output_bias_gradient():
    w = LstmWeights.init(4, seed=1)
    X, _ = _batch(3)
    pred, _ = fc._forward(w, X)
    grads = fc.bptt_gradients(w, [(x, p) for x, p in zip(X, pred)])
    assert grads["b_out"][0] == 0.0


def test_doubling_residual_doubles_output_gradient():
    w = LstmWeights.init(4, seed=1)
    X, y = _batch(5)
    pred, _ = fc._forward(w, X)
    g1 = fc.bptt_gradients(w, (X, y))
    g2 = fc.bptt_gradients(w, (X, pred - 2 * (pred - y)))
    assert np.allclose(g2["w_out"], 2 * g1["w_out"], rtol=1e-12, atol=1e-15)
    assert np.allclose(g2["b_out"], 2 * g1["b_out"], rtol=1e-12)


def test_weights_text_round_trip_lossless():
    w = LstmWeights.init(7, seed=9)
    back = LstmWeights.from_text(w.to_text())
    for name in fc.PARAM_NAMES:
        assert np.array_equal(getattr(w, name), getattr(back, name))


def test_weights_reject_non_finite():
    w = LstmWeights.zeros(2)
    with pytest.raises(ValueError):
        LstmWeights(2, w.W_x, w.W_h, w.b, w.w_out, np.array([np.nan]))


@pytest.mark.parametrize("kwargs", [dict(train_fraction=1.0), dict(epochs=0), dict(batch_size=0),
                                    dict(window_len=0), dict(optimizer="lbfgs")])
def test_train_config_invariants(kwargs):
    with pytest.raises(fc.ForecastConfigError):
        TrainConfig(**kwargs)


def test_series_too_short():
    with pytest.raises(fc.ForecastConfigError):
        fc.train(np.zeros(40), TrainConfig(window_len=48))


SMALL = TrainConfig(epochs=6, hidden_size=6, window_len=12, seed=3)


def test_training_bitwise_reproducible():
    series = 0.5 + 0.4 * np.sin(2 * np.pi * np.arange(300) / 48)
    w1, r1 = fc.train(series, SMALL)
    w2, r2 = fc.train(series, SMALL)
    assert r1 == r2
    for name in fc.PARAM_NAMES:
        assert np.array_equal(getattr(w1, name), getattr(w2, name))


def test_loss_non_increasing_on_periodic_series():
    # Plain mini-batch gradient descent; Adam oscillates once the loss nears zero.
    series = 0.5 + 0.4 * np.sin(2 * np.pi * np.arange(14 * 48) / 48)
    hist = fc.TrainHistory()
    cfg = TrainConfig(epochs=15, hidden_size=10, window_len=24, seed=0, optimizer="sgd", learning_rate=0.1)
    fc.train(series, cfg, hist)
    loss = hist.epoch_loss
    assert loss[-1] < loss[0]
    assert all(b <= 1.05 * a for a, b in zip(loss, loss[1:]))


def test_sinusoid_beats_persistence():
    series = 0.5 + 0.4 * np.sin(2 * np.pi * np.arange(14 * 48) / 48)
    hist = fc.TrainHistory()
    _, test_rmse = fc.train(series, TrainConfig(epochs=15, hidden_size=10, window_len=24, seed=0), hist)
    assert test_rmse < hist.persistence_rmse


def test_constant_series_forecast_is_flat():
    series = np.full(400, 0.6)
    w, _ = fc.train(series, TrainConfig(epochs=10, hidden_size=6, window_len=12, seed=1))
    pred = fc.predict_horizon(w, series, 3, 12).predictions
    assert np.all(np.abs(pred - 0.6) < 0.05)


def test_horizon_one_equals_forward():
    w = LstmWeights.init(5, seed=0, scale=0.5)
    hist = np.linspace(0, 1, 20)
    expected = min(max(fc.lstm_forward(w, hist[-8:])[0], 0.0), 1.0)
    assert fc.predict_horizon(w, hist, 1, 8).predictions[0] == expected


def test_recursive_strategy_feeds_predictions_back():
    w = LstmWeights.init(5, seed=1, scale=0.5)
    hist = np.linspace(0, 1, 10)
    p = fc.predict_horizon(w, hist, 3, 4).predictions
    p2 = fc.lstm_forward(w, [hist[-2], hist[-1], p[0], p[1]])[0]
    assert p[2] == pytest.approx(min(max(p2, 0.0), 1.0), abs=1e-15)


def test_predictions_clamped():
    w = LstmWeights.zeros(3)
    w.b_out[0] = 3.0
    assert fc.predict_horizon(w, [0.1, 0.2], 2).predictions.tolist() == [1.0, 1.0]
    w.b_out[0] = -3.0
    assert fc.predict_horizon(w, [0.1, 0.2], 2).predictions.tolist() == [0.0, 0.0]


def test_rmse_examples():
    assert fc.rmse([1, 2], [1, 2]) == 0
    assert fc.rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5))
    with pytest.raises(ValueError):
        fc.rmse([1], [1, 2])
    with pytest.raises(ValueError):
        fc.rmse([], [])


NOISY = 0.5 + 0.3 * np.sin(2 * np.pi * np.arange(8 * 48) / 48) + 0.05 * np.random.default_rng(3).standard_normal(8 * 48)


@pytest.mark.parametrize("bad", [dict(val_fraction=-0.1), dict(val_fraction=1.0), dict(patience=0)])
def test_early_stopping_config_rejected(bad):
    with pytest.raises(fc.ForecastConfigError):
        TrainConfig(**bad)


def test_early_stopping_keeps_best_validation_weights():
    cfg = TrainConfig(epochs=25, hidden_size=6, window_len=24, seed=0, learning_rate=0.05, patience=3)
    hist = fc.TrainHistory()
    w, _ = fc.train(NOISY, cfg, hist)
    assert hist.best_epoch == int(np.argmin(hist.val_rmse))
    assert len(hist.epoch_loss) <= hist.best_epoch + 1 + cfg.patience
    # Re-scoring the returned weights on the validation windows reproduces the best score.
    split = int(round(cfg.train_fraction * NOISY.size))
    X, y = fc.make_windows(NOISY, cfg.window_len, 0, split)
    n_val = int(round(cfg.val_fraction * len(y)))
    pred, _ = fc._forward(w, X[len(y) - n_val:])
    assert fc.rmse(np.clip(pred, 0, 1), y[len(y) - n_val:]) == min(hist.val_rmse)


def test_no_validation_runs_every_epoch():
    cfg = TrainConfig(epochs=7, hidden_size=4, window_len=12, seed=0, val_fraction=0.0)
    hist = fc.TrainHistory()
    fc.train(NOISY, cfg, hist)
    assert len(hist.epoch_loss) == 7 and hist.val_rmse == [] and hist.best_epoch == 6
