"""Hourly load forecasting on top of the from-scratch recurrent nets.

Covers the whole training pipeline: sliding-window feature construction
(lagged loads plus a day-of-week one-hot), min-max scaling fitted on the
training split, Adam updates over the exact BPTT gradients, inverted
dropout on the recurrent stack output, and the usual regression metrics.
A seeded synthetic load generator stands in for proprietary utility
data; the data source is pluggable (any hourly kW series).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import blstm
from .blstm import BlstmModel, build_model, gradients, model_forward, named_parameters

__all__ = [
    "TrainingConfig",
    "SyntheticLoadConfig",
    "generate_load",
    "build_windows",
    "train",
    "predict_series",
    "metrics",
    "save_model",
    "load_model",
    "load_series_csv",
]

HOURS_PER_DAY = 24
FEATURE_DIM = 1 + 7  # scaled load + day-of-week one-hot


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 80
    learning_rate: float = 5e-3
    dropout_rate: float = 0.3
    batch_size: int = 64
    seed: int = 0
    hidden: int = 32
    depth: int = 2
    window: int = 14
    bidirectional: bool = True
    head: str = "last_step"
    train_fraction: float = 0.8

    def __post_init__(self):
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class SyntheticLoadConfig:
    """Daily and weekly sinusoids over a base load with AR(1) noise."""

    days: int = 60
    base_kw: float = 60.0
    daily_amplitude: float = 0.25
    weekly_amplitude: float = 0.08
    noise_sigma: float = 0.015  # fraction of base
    ar_coefficient: float = 0.7
    seed: int = 1234


def generate_load(config: SyntheticLoadConfig = SyntheticLoadConfig()) -> np.ndarray:
    """Deterministic synthetic hourly load series in kW."""
    rng = np.random.default_rng(config.seed)
    n = config.days * HOURS_PER_DAY
    t = np.arange(n)
    daily = config.daily_amplitude * np.sin(2 * np.pi * (t - 9) / 24)
    weekly = config.weekly_amplitude * np.sin(2 * np.pi * t / (24 * 7))
    noise = np.zeros(n)
    eps = rng.normal(0.0, config.noise_sigma * config.base_kw, size=n)
    for i in range(1, n):
        noise[i] = config.ar_coefficient * noise[i - 1] + eps[i]
    series = config.base_kw * (1.0 + daily + weekly) + noise
    return np.maximum(series, 0.1 * config.base_kw)


def load_series_csv(path: str | Path) -> np.ndarray:
    """Read an hourly load CSV (timestamp,load_kw) into a kW array."""
    rows = Path(path).read_text().strip().splitlines()
    if not rows or not rows[0].lower().startswith("timestamp"):
        raise ValueError("load series CSV needs a 'timestamp,load_kw' header")
    return np.array([float(r.split(",")[1]) for r in rows[1:]])


def _day_of_week(hour_index: np.ndarray) -> np.ndarray:
    return (hour_index // HOURS_PER_DAY) % 7


def build_windows(series: np.ndarray, window: int, load_min: float,
                  load_max: float, start_hour: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sliding windows (N, T, 8) and scaled next-hour targets (N,).

    Each step's feature vector is the scaled load at that hour plus a
    one-hot day of week. ``start_hour`` anchors the calendar: it is the
    absolute hour index of ``series[0]``, so a slice of a longer history
    keeps the day-of-week features of the original positions.
    """
    series = np.asarray(series, dtype=float)
    if len(series) < window + 1:
        raise ValueError(f"series of {len(series)} points cannot fill a {window}-hour window")
    span = max(load_max - load_min, 1e-9)
    scaled = (series - load_min) / span
    n = len(series) - window
    x = np.zeros((n, window, FEATURE_DIM))
    y = np.zeros(n)
    hours = start_hour + np.arange(len(series))
    for i in range(n):
        x[i, :, 0] = scaled[i:i + window]
        dows = _day_of_week(hours[i:i + window])
        x[i, np.arange(window), 1 + dows] = 1.0
        y[i] = scaled[i + window]
    return x, y


def _adam_state(model: BlstmModel):
    return {name: (np.zeros_like(p), np.zeros_like(p))
            for name, p in named_parameters(model)}


def _adam_update(model: BlstmModel, grads, state, lr, step,
                 beta1=0.9, beta2=0.999, eps=1e-8):
    for name, p in named_parameters(model):
        g = grads[name]
        m, v = state[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** step)
        v_hat = v / (1 - beta2 ** step)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrainResult:
    model: BlstmModel
    loss_history: list[float]
    config: TrainingConfig


def train(series: np.ndarray, config: TrainingConfig) -> TrainResult:
    """Fit a forecaster on the leading train split of an hourly kW series.

    Deterministic for a fixed config: weight init, batch shuffling, and
    dropout masks all come from one seeded generator. The loss history
    records the mean training MSE (scaled space) per epoch.
    """
    series = np.asarray(series, dtype=float)
    n_train = int(len(series) * config.train_fraction)
    if n_train < config.window + 2:
        raise ValueError("training split shorter than one window plus target")
    train_series = series[:n_train]
    load_min, load_max = float(train_series.min()), float(train_series.max())
    x, y = build_windows(train_series, config.window, load_min, load_max)

    rng = np.random.default_rng(config.seed)
    model = build_model(rng, FEATURE_DIM, config.hidden, config.depth,
                        config.window, config.bidirectional, config.head)
    model.load_min, model.load_max = load_min, load_max

    state = _adam_state(model)
    top_width = model.layers[-1].width
    history: list[float] = []
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(x))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = x[idx], y[idx]
            mask = None
            if config.dropout_rate > 0.0:
                keep = rng.random((len(idx), config.window, top_width)) >= config.dropout_rate
                mask = keep / (1.0 - config.dropout_rate)
            loss, grads = gradients(model, xb, yb, dropout_mask=mask)
            step += 1
            _adam_update(model, grads, state, config.learning_rate, step)
            epoch_loss += loss * len(idx)
        history.append(epoch_loss / len(x))
    return TrainResult(model=model, loss_history=history, config=config)


def predict_series(model: BlstmModel, series: np.ndarray,
                   start_hour: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """One-step-ahead predictions over a series; returns (predicted, actual) kW.

    Evaluation is dropout-free and deterministic. The first prediction
    lands at index ``window`` of the series; ``start_hour`` anchors the
    calendar features as in build_windows.
    """
    x, _ = build_windows(series, model.input_window, model.load_min,
                         model.load_max, start_hour)
    span = max(model.load_max - model.load_min, 1e-9)
    preds = []
    for start in range(0, len(x), 512):
        preds.append(model_forward(model, x[start:start + 512]))
    scaled = np.concatenate(preds) if preds else np.zeros(0)
    predicted = scaled * span + model.load_min
    actual = np.asarray(series, dtype=float)[model.input_window:]
    return predicted, actual


def metrics(predicted: Sequence[float], actual: Sequence[float]) -> dict[str, float]:
    """MAPE (percent), MAE (kW), RMSE (kW); zero actuals are excluded from MAPE."""
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {a.shape}")
    err = p - a
    nonzero = a != 0
    if not np.all(nonzero):
        mape = float("nan") if not np.any(nonzero) else \
            float(np.mean(np.abs(err[nonzero] / a[nonzero])) * 100.0)
    else:
        mape = float(np.mean(np.abs(err / a)) * 100.0)
    return {
        "mape_pct": mape,
        "mae_kw": float(np.mean(np.abs(err))),
        "rmse_kw": float(np.sqrt(np.mean(err ** 2))),
    }


# ---------------------------------------------------------------------------
# checkpoints: versioned JSON tensor dump with shape metadata

CHECKPOINT_VERSION = 1


def save_model(model: BlstmModel, path: str | Path) -> None:
    tensors = {}
    for name, p in named_parameters(model):
        tensors[name] = {"shape": list(p.shape), "data": p.ravel().tolist()}
    payload = {
        "version": CHECKPOINT_VERSION,
        "arch": {
            "depth": len(model.layers),
            "hidden": model.layers[0].fwd.hidden,
            "input_dim": model.input_dim,
            "window": model.input_window,
            "bidirectional": model.bidirectional,
            "head": model.head,
        },
        "scaler": {"load_min": model.load_min, "load_max": model.load_max},
        "feature_spec": model.feature_spec,
        "tensors": tensors,
    }
    Path(path).write_text(json.dumps(payload))


def load_model(path: str | Path) -> BlstmModel:
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    arch = payload["arch"]
    rng = np.random.default_rng(0)  # shapes only; weights are overwritten below
    model = build_model(rng, arch["input_dim"], arch["hidden"], arch["depth"],
                        arch["window"], arch["bidirectional"], arch["head"])
    model.load_min = payload["scaler"]["load_min"]
    model.load_max = payload["scaler"]["load_max"]
    model.feature_spec = payload.get("feature_spec", model.feature_spec)
    for name, p in named_parameters(model):
        rec = payload["tensors"][name]
        arr = np.array(rec["data"], dtype=float).reshape(rec["shape"])
        if arr.shape != p.shape:
            raise ValueError(f"checkpoint tensor {name} has shape {arr.shape}, expected {p.shape}")
        p[...] = arr
    return model


# ---------------------------------------------------------------------------
# single-hidden-layer reference model for comparative testing

@dataclass
class MlpBaseline:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    window: int
    load_min: float = 0.0
    load_max: float = 1.0


def train_mlp_baseline(series: np.ndarray, config: TrainingConfig,
                       hidden: int = 64) -> tuple[MlpBaseline, list[float]]:
    """Train the flat-window reference net with the same schedule as train()."""
    series = np.asarray(series, dtype=float)
    n_train = int(len(series) * config.train_fraction)
    train_series = series[:n_train]
    load_min, load_max = float(train_series.min()), float(train_series.max())
    x, y = build_windows(train_series, config.window, load_min, load_max)
    xf = x.reshape(len(x), -1)
    rng = np.random.default_rng(config.seed)
    d = xf.shape[1]
    w1 = rng.uniform(-1 / math.sqrt(d), 1 / math.sqrt(d), size=(hidden, d))
    b1 = np.zeros(hidden)
    w2 = rng.uniform(-1 / math.sqrt(hidden), 1 / math.sqrt(hidden), size=(1, hidden))
    b2 = np.zeros(1)
    params = {"w1": w1, "b1": b1, "w2": w2, "b2": b2}
    state = {k: (np.zeros_like(v), np.zeros_like(v)) for k, v in params.items()}
    history = []
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(len(xf))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = xf[idx], y[idx]
            z1 = xb @ w1.T + b1
            a1 = np.tanh(z1)
            pred = (a1 @ w2.T + b2)[:, 0]
            err = pred - yb
            loss = float(np.mean(err ** 2))
            dpred = 2.0 * err / len(idx)
            g = {
                "w2": dpred[None, :] @ a1,
                "b2": np.array([dpred.sum()]),
            }
            da1 = dpred[:, None] * w2
            dz1 = da1 * (1 - a1 ** 2)
            g["w1"] = dz1.T @ xb
            g["b1"] = dz1.sum(axis=0)
            step += 1
            for k, p in params.items():
                m, v = state[k]
                m *= 0.9
                m += 0.1 * g[k]
                v *= 0.999
                v += 0.001 * g[k] * g[k]
                p -= config.learning_rate * (m / (1 - 0.9 ** step)) / \
                    (np.sqrt(v / (1 - 0.999 ** step)) + 1e-8)
            epoch_loss += loss * len(idx)
        history.append(epoch_loss / len(xf))
    return MlpBaseline(w1, b1, w2, b2, config.window, load_min, load_max), history


def predict_mlp(baseline: MlpBaseline, series: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x, _ = build_windows(series, baseline.window, baseline.load_min, baseline.load_max)
    xf = x.reshape(len(x), -1)
    a1 = np.tanh(xf @ baseline.w1.T + baseline.b1)
    scaled = (a1 @ baseline.w2.T + baseline.b2)[:, 0]
    span = max(baseline.load_max - baseline.load_min, 1e-9)
    predicted = scaled * span + baseline.load_min
    return predicted, np.asarray(series, dtype=float)[baseline.window:]
