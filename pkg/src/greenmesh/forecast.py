"""Single-hidden-layer LSTM one-step forecaster, trained with BPTT in numpy.

Gate layout inside the stacked tensors is (input, forget, output, candidate).
The input size is fixed at 1: each time step feeds one normalized sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .traces import TimeSeries

PARAM_NAMES = ("W_x", "W_h", "b", "w_out", "b_out")


class ForecastConfigError(ValueError):
    pass


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LstmWeights:
    hidden_size: int
    W_x: np.ndarray      # (4H,)   input weights
    W_h: np.ndarray      # (4H, H) recurrent weights
    b: np.ndarray        # (4H,)
    w_out: np.ndarray    # (H,)
    b_out: np.ndarray    # (1,)

    def __post_init__(self):
        H = self.hidden_size
        shapes = {"W_x": (4 * H,), "W_h": (4 * H, H), "b": (4 * H,), "w_out": (H,), "b_out": (1,)}
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=float).reshape(shape)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
            setattr(self, name, arr)

    @classmethod
    def init(cls, hidden_size: int = 40, seed: int = 0, scale: float = 0.1) -> "LstmWeights":
        rng = np.random.default_rng(seed)
        H = hidden_size
        return cls(H,
                   rng.uniform(-scale, scale, 4 * H),
                   rng.uniform(-scale, scale, (4 * H, H)),
                   rng.uniform(-scale, scale, 4 * H),
                   rng.uniform(-scale, scale, H),
                   rng.uniform(-scale, scale, 1))

    @classmethod
    def zeros(cls, hidden_size: int) -> "LstmWeights":
        H = hidden_size
        return cls(H, np.zeros(4 * H), np.zeros((4 * H, H)), np.zeros(4 * H), np.zeros(H), np.zeros(1))

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "LstmWeights":
        return LstmWeights(self.hidden_size, **{k: v.copy() for k, v in self.params().items()})

    def to_text(self) -> str:
        lines = [f"hidden_size {self.hidden_size}"]
        for name, arr in self.params().items():
            lines.append(name + " " + " ".join(repr(float(v)) for v in arr.ravel()))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LstmWeights":
        rows = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            name, *vals = line.split()
            rows[name] = vals
        H = int(rows.pop("hidden_size")[0])
        missing = set(PARAM_NAMES) - rows.keys()
        if missing:
            raise ValueError(f"weights file missing {sorted(missing)}")
        return cls(H, **{name: np.array([float(v) for v in rows[name]]) for name in PARAM_NAMES})


@dataclass
class TrainConfig:
    epochs: int = 80
    batch_size: int = 4
    train_fraction: float = 0.7
    window_len: int = 48
    learning_rate: float = 0.01
    seed: int = 0
    hidden_size: int = 40
    # "adam" or "sgd" (plain mini-batch gradient descent).
    optimizer: str = "adam"
    # Global-norm clip on each mini-batch gradient; 0 disables.
    clip_norm: float = 5.0
    # Tail of the training span held out for early stopping; 0 disables.
    val_fraction: float = 0.15
    # Epochs without validation improvement before stopping.
    patience: int = 10

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ForecastConfigError("train_fraction must lie in (0, 1)")
        for name in ("epochs", "batch_size", "window_len", "hidden_size"):
            if getattr(self, name) < 1:
                raise ForecastConfigError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ForecastConfigError("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ForecastConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ForecastConfigError("val_fraction must lie in [0, 1)")
        if self.patience < 1:
            raise ForecastConfigError("patience must be >= 1")


@dataclass
class ForecastResult:
    predictions: np.ndarray
    per_step_rmse: np.ndarray | None = None


@dataclass
class TrainHistory:
    epoch_loss: list = field(default_factory=list)
    val_rmse: list = field(default_factory=list)
    best_epoch: int = -1
    test_rmse: float = math.nan
    persistence_rmse: float = math.nan


# --------------------------------------------------------------------------
# forward / backward


def _forward(weights: LstmWeights, X: np.ndarray):
    """Batched forward pass.  X has shape (B, W).  Returns (pred (B,), cache)."""
    B, W = X.shape
    H = weights.hidden_size
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    WhT = weights.W_h.T
    steps = []
    for t in range(W):
        z = X[:, t:t + 1] * weights.W_x + h @ WhT + weights.b
        s = _sigmoid(z[:, :3 * H])
        i, f, o = s[:, :H], s[:, H:2 * H], s[:, 2 * H:]
        g = np.tanh(z[:, 3 * H:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h_prev = h
        h = o * tc
        steps.append((h_prev, c_prev, i, f, o, g, tc))
    pred = h @ weights.w_out + weights.b_out[0]
    return pred, {"X": X, "steps": steps, "h": h}


def lstm_forward(weights: LstmWeights, window) -> tuple[float, dict]:
    x = np.asarray(window, dtype=float).reshape(1, -1)
    if x.size == 0:
        raise ValueError("window must be non-empty")
    pred, cache = _forward(weights, x)
    return float(pred[0]), cache


def _backward(weights: LstmWeights, cache: dict, dpred: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of sum(dpred * pred) w.r.t. every parameter."""
    H = weights.hidden_size
    X = cache["X"]
    grads = {
        "W_x": np.zeros(4 * H),
        "W_h": np.zeros((4 * H, H)),
        "b": np.zeros(4 * H),
        "w_out": cache["h"].T @ dpred,
        "b_out": np.array([dpred.sum()]),
    }
    dh = np.outer(dpred, weights.w_out)
    dc = np.zeros_like(dh)
    Wh = weights.W_h
    B, W = X.shape
    # Per-step pre-activation gradients, reduced into parameter grads at the end.
    dZ = np.empty((W, B, 4 * H))
    Hprev = np.empty((W, B, H))
    for t in range(W - 1, -1, -1):
        h_prev, c_prev, i, f, o, g, tc = cache["steps"][t]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = dZ[t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc * i * (1.0 - g * g)
        Hprev[t] = h_prev
        dh = dz @ Wh
        dc = dc * f
    grads["W_x"] = np.einsum("bt,tbk->k", X, dZ)
    grads["W_h"] = dZ.reshape(-1, 4 * H).T @ Hprev.reshape(-1, H)
    grads["b"] = dZ.sum(axis=(0, 1))
    return grads


def batch_loss(weights: LstmWeights, windows: np.ndarray, targets: np.ndarray) -> float:
    pred, _ = _forward(weights, windows)
    return float(np.mean((pred - targets) ** 2))


def bptt_gradients(weights: LstmWeights, batch) -> dict[str, np.ndarray]:
    """Exact gradients of the batch MSE via backpropagation through time.

    ``batch`` is a list of (window, target) pairs with equal window lengths, or a
    tuple of arrays (windows (B, W), targets (B,)).
    """
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray) and batch[0].ndim == 2:
        windows, targets = batch
    else:
        if not batch:
            raise ValueError("batch must be non-empty")
        windows = np.array([np.asarray(w, dtype=float) for w, _ in batch])
        targets = np.array([float(t) for _, t in batch])
    pred, cache = _forward(weights, windows)
    dpred = 2.0 * (pred - targets) / len(targets)
    return _backward(weights, cache, dpred)


# --------------------------------------------------------------------------
# training and prediction


def make_windows(values: np.ndarray, window_len: int, start: int = 0, stop: int | None = None):
    """Windows whose *target* index lies in [max(start, window_len), stop)."""
    stop = len(values) if stop is None else stop
    idx = np.arange(max(start, window_len), stop)
    if idx.size == 0:
        return np.empty((0, window_len)), np.empty(0)
    X = np.lib.stride_tricks.sliding_window_view(values, window_len)[idx - window_len]
    return np.ascontiguousarray(X), values[idx].copy()


def train(ts: TimeSeries | np.ndarray, cfg: TrainConfig | None = None,
          history: TrainHistory | None = None) -> tuple[LstmWeights, float]:
    """Fit on the chronological first ``train_fraction`` of the series.

    Returns the weights and the held-out one-step RMSE.  Windows for test
    targets may reach back into the training span; targets never cross.
    """
    cfg = cfg or TrainConfig()
    values = ts.values if isinstance(ts, TimeSeries) else np.asarray(ts, dtype=float)
    if isinstance(ts, TimeSeries) and ts.unit != "normalized":
        raise ForecastConfigError("training expects a normalized series")
    n = values.size
    if n <= cfg.window_len + 1:
        raise ForecastConfigError(f"series of length {n} too short for window_len {cfg.window_len}")
    split = int(round(cfg.train_fraction * n))
    Xtr, ytr = make_windows(values, cfg.window_len, 0, split)
    Xte, yte = make_windows(values, cfg.window_len, split, n)
    if len(ytr) == 0 or len(yte) == 0:
        raise ForecastConfigError("series too short to form both training and test windows")
    # Chronological tail of the training windows drives early stopping.
    n_val = int(round(cfg.val_fraction * len(ytr)))
    if n_val >= len(ytr):
        raise ForecastConfigError("val_fraction leaves no training windows")
    Xva, yva = Xtr[len(ytr) - n_val:], ytr[len(ytr) - n_val:]
    Xtr, ytr = Xtr[:len(ytr) - n_val], ytr[:len(ytr) - n_val]

    rng = np.random.default_rng(cfg.seed)
    weights = LstmWeights.init(cfg.hidden_size, seed=int(rng.integers(2**31)))
    params = weights.params()
    step = _Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else _Sgd(params, cfg.learning_rate)
    best_val, best, best_epoch = math.inf, None, -1
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(ytr))
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            sel = order[s:s + cfg.batch_size]
            pred, cache = _forward(weights, Xtr[sel])
            resid = pred - ytr[sel]
            total += float(resid @ resid)
            grads = _backward(weights, cache, 2.0 * resid / len(sel))
            if cfg.clip_norm > 0:
                norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
                if norm > cfg.clip_norm:
                    scale = cfg.clip_norm / norm
                    for g in grads.values():
                        g *= scale
            step(grads)
        if history is not None:
            history.epoch_loss.append(total / len(ytr))
        if n_val:
            pv, _ = _forward(weights, Xva)
            val = rmse(np.clip(pv, 0.0, 1.0), yva)
            if history is not None:
                history.val_rmse.append(val)
            if val < best_val:
                best_val, best_epoch = val, epoch
                best = {k: v.copy() for k, v in params.items()}
            elif epoch - best_epoch >= cfg.patience:
                break
    if best is not None:
        # In place: the optimizer and weights share these arrays.
        for k, v in best.items():
            params[k][...] = v
    if history is not None:
        history.best_epoch = best_epoch if n_val else cfg.epochs - 1

    pred, _ = _forward(weights, Xte)
    test_rmse = rmse(np.clip(pred, 0.0, 1.0), yte)
    if history is not None:
        history.test_rmse = test_rmse
        history.persistence_rmse = persistence_rmse(values, cfg.window_len, split)
    return weights, test_rmse


class _Sgd:
    def __init__(self, params, lr):
        self.params, self.lr = params, lr

    def __call__(self, grads):
        for name, g in grads.items():
            self.params[name] -= self.lr * g


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.lr = params, lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def __call__(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            self.params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def persistence_rmse(values: np.ndarray, window_len: int, split: int) -> float:
    """RMSE of predict-the-previous-sample on the same test targets ``train`` uses."""
    values = np.asarray(values, dtype=float)
    idx = np.arange(max(split, window_len), values.size)
    return rmse(values[idx - 1], values[idx])


def predict_batch(weights: LstmWeights, histories: np.ndarray, T: int, window_len: int) -> np.ndarray:
    """Recursive T-step forecasts for many histories at once -> (B, T), clamped to [0, 1]."""
    hist = np.atleast_2d(np.asarray(histories, dtype=float))
    if hist.shape[1] < window_len:
        raise ValueError("history shorter than window_len")
    window = hist[:, -window_len:].copy()
    out = np.empty((window.shape[0], T))
    for step in range(T):
        pred, _ = _forward(weights, window)
        pred = np.clip(pred, 0.0, 1.0)
        out[:, step] = pred
        window = np.concatenate([window[:, 1:], pred[:, None]], axis=1)
    return out


def predict_horizon(weights: LstmWeights, history, T: int, window_len: int | None = None,
                    truth=None) -> ForecastResult:
    if T < 1:
        raise ValueError("T must be >= 1")
    history = np.asarray(history, dtype=float)
    window_len = history.size if window_len is None else window_len
    preds = predict_batch(weights, history[None, :], T, window_len)[0]
    per_step = None
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        per_step = np.abs(preds - truth[:T])
    return ForecastResult(preds, per_step)


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("rmse of empty sequences")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def horizon_rmse(weights: LstmWeights, values: np.ndarray, T: int, window_len: int,
                 start: int) -> np.ndarray:
    """Per-step RMSE of recursive T-step forecasts issued at every slot from ``start``."""
    values = np.asarray(values, dtype=float)
    origins = np.arange(max(start, window_len), values.size - T + 1)
    hist = np.lib.stride_tricks.sliding_window_view(values, window_len)[origins - window_len]
    preds = predict_batch(weights, hist, T, window_len)
    truth = np.stack([values[origins + k] for k in range(T)], axis=1)
    return np.sqrt(np.mean((preds - truth) ** 2, axis=0))
