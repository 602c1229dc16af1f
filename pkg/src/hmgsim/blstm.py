"""Long short-term memory networks built from scratch on numpy.

A cell keeps separate weight matrices and biases for its input, forget,
candidate, and output gates:

    i_t = sigmoid(W_ix x_t + W_ih h_{t-1} + b_i)
    f_t = sigmoid(W_fx x_t + W_fh h_{t-1} + b_f)
    g_t = tanh   (W_cx x_t + W_ch h_{t-1} + b_c)
    o_t = sigmoid(W_ox x_t + W_oh h_{t-1} + b_o)
    c_t = f_t * c_{t-1} + i_t * g_t
    h_t = o_t * tanh(c_t)

A bidirectional model runs one cell left-to-right over the window and a
second right-to-left, then projects both hidden sequences through a
linear head, y_t = W_fy h_fwd_t + W_by h_bwd_t + b_y. Layers stack by
feeding the concatenated hidden sequences upward. Training gradients are
exact backpropagation through time; the gradient of every parameter is
checked against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

__all__ = [
    "LstmCellParams",
    "BiLayer",
    "BlstmModel",
    "init_cell",
    "build_model",
    "lstm_cell_forward",
    "blstm_forward",
    "blstm_outputs",
    "model_forward",
    "gradients",
    "named_parameters",
]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LstmCellParams:
    """All weights of one LSTM cell; shapes (hidden x input), (hidden x hidden), (hidden,)."""

    w_ix: np.ndarray
    w_ih: np.ndarray
    b_i: np.ndarray
    w_fx: np.ndarray
    w_fh: np.ndarray
    b_f: np.ndarray
    w_cx: np.ndarray
    w_ch: np.ndarray
    b_c: np.ndarray
    w_ox: np.ndarray
    w_oh: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        h, d = self.w_ix.shape
        for name in ("w_fx", "w_cx", "w_ox"):
            if getattr(self, name).shape != (h, d):
                raise ValueError(f"{name}: expected shape {(h, d)}")
        for name in ("w_ih", "w_fh", "w_ch", "w_oh"):
            if getattr(self, name).shape != (h, h):
                raise ValueError(f"{name}: expected shape {(h, h)}")
        for name in ("b_i", "b_f", "b_c", "b_o"):
            if getattr(self, name).shape != (h,):
                raise ValueError(f"{name}: expected shape {(h,)}")
        for name in _CELL_FIELDS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name}: non-finite entries")

    @property
    def hidden(self) -> int:
        return self.w_ix.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_ix.shape[1]


_CELL_FIELDS = ("w_ix", "w_ih", "b_i", "w_fx", "w_fh", "b_f",
                "w_cx", "w_ch", "b_c", "w_ox", "w_oh", "b_o")


def init_cell(rng: np.random.Generator, input_dim: int, hidden: int) -> LstmCellParams:
    """Uniform +-1/sqrt(fan-in) weights, zero biases."""
    def w(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    return LstmCellParams(
        w_ix=w(hidden, input_dim), w_ih=w(hidden, hidden), b_i=np.zeros(hidden),
        w_fx=w(hidden, input_dim), w_fh=w(hidden, hidden), b_f=np.zeros(hidden),
        w_cx=w(hidden, input_dim), w_ch=w(hidden, hidden), b_c=np.zeros(hidden),
        w_ox=w(hidden, input_dim), w_oh=w(hidden, hidden), b_o=np.zeros(hidden),
    )


@dataclass
class BiLayer:
    fwd: LstmCellParams
    bwd: LstmCellParams | None  # None for a unidirectional layer

    @property
    def width(self) -> int:
        return self.fwd.hidden * (2 if self.bwd is not None else 1)


@dataclass
class BlstmModel:
    """Stacked (bi)directional recurrent layers with a linear head.

    ``head`` selects how the projection reads the top layer: "last_step"
    projects the hidden states at the final window position; "summary"
    projects each direction's final state (the backward direction's
    final state sits at the first window position).
    """

    layers: list[BiLayer]
    w_fy: np.ndarray            # (1, hidden)
    w_by: np.ndarray | None     # (1, hidden), None when unidirectional
    b_y: np.ndarray             # (1,)
    input_window: int
    head: str = "last_step"
    # Fitted feature/target scaling, attached after training.
    load_min: float = 0.0
    load_max: float = 1.0
    feature_spec: str = "lagged_load+day_of_week"

    def __post_init__(self):
        if self.head not in ("last_step", "summary"):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def bidirectional(self) -> bool:
        return self.layers[0].bwd is not None

    @property
    def input_dim(self) -> int:
        return self.layers[0].fwd.input_dim


def build_model(
    rng: np.random.Generator,
    input_dim: int,
    hidden: int,
    depth: int = 2,
    window: int = 14,
    bidirectional: bool = True,
    head: str = "last_step",
) -> BlstmModel:
    layers = []
    d = input_dim
    for _ in range(depth):
        fwd = init_cell(rng, d, hidden)
        bwd = init_cell(rng, d, hidden) if bidirectional else None
        layers.append(BiLayer(fwd, bwd))
        d = hidden * (2 if bidirectional else 1)
    bound = 1.0 / np.sqrt(hidden)
    w_fy = rng.uniform(-bound, bound, size=(1, hidden))
    w_by = rng.uniform(-bound, bound, size=(1, hidden)) if bidirectional else None
    return BlstmModel(layers=layers, w_fy=w_fy, w_by=w_by, b_y=np.zeros(1),
                      input_window=window, head=head)


def lstm_cell_forward(x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
                      params: LstmCellParams) -> tuple[np.ndarray, np.ndarray]:
    """One cell step; accepts a single vector or a batch of rows."""
    x = np.atleast_2d(np.asarray(x_t, dtype=float))
    h = np.atleast_2d(np.asarray(h_prev, dtype=float))
    c = np.atleast_2d(np.asarray(c_prev, dtype=float))
    if x.shape[1] != params.input_dim:
        raise ValueError(f"x_t has dimension {x.shape[1]}, cell expects {params.input_dim}")
    if h.shape[1] != params.hidden or c.shape[1] != params.hidden:
        raise ValueError(f"state dimension mismatch: cell hidden size is {params.hidden}")
    i = _sigmoid(x @ params.w_ix.T + h @ params.w_ih.T + params.b_i)
    f = _sigmoid(x @ params.w_fx.T + h @ params.w_fh.T + params.b_f)
    g = np.tanh(x @ params.w_cx.T + h @ params.w_ch.T + params.b_c)
    o = _sigmoid(x @ params.w_ox.T + h @ params.w_oh.T + params.b_o)
    c_t = f * c + i * g
    h_t = o * np.tanh(c_t)
    if np.asarray(x_t).ndim == 1:
        return h_t[0], c_t[0]
    return h_t, c_t


class _StepCache:
    __slots__ = ("x", "h_prev", "c_prev", "i", "f", "g", "o", "c", "tanh_c")

    def __init__(self, x, h_prev, c_prev, i, f, g, o, c, tanh_c):
        self.x = x
        self.h_prev = h_prev
        self.c_prev = c_prev
        self.i = i
        self.f = f
        self.g = g
        self.o = o
        self.c = c
        self.tanh_c = tanh_c


def _run_direction(x: np.ndarray, params: LstmCellParams,
                   reverse: bool) -> tuple[np.ndarray, list[_StepCache]]:
    """Run a cell over (B, T, D); returns hidden states indexed by time."""
    b, t_len, _ = x.shape
    hdim = params.hidden
    h = np.zeros((b, hdim))
    c = np.zeros((b, hdim))
    h_seq = np.zeros((b, t_len, hdim))
    cache: list[_StepCache] = []
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    for t in order:
        xt = x[:, t, :]
        i = _sigmoid(xt @ params.w_ix.T + h @ params.w_ih.T + params.b_i)
        f = _sigmoid(xt @ params.w_fx.T + h @ params.w_fh.T + params.b_f)
        g = np.tanh(xt @ params.w_cx.T + h @ params.w_ch.T + params.b_c)
        o = _sigmoid(xt @ params.w_ox.T + h @ params.w_oh.T + params.b_o)
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        cache.append(_StepCache(xt, h, c, i, f, g, o, c_new, tanh_c))
        h, c = h_new, c_new
        h_seq[:, t, :] = h
    return h_seq, cache


def _backprop_direction(
    params: LstmCellParams,
    cache: list[_StepCache],
    dh_time: np.ndarray,  # (B, T, H) gradient arriving at each time step's h
    reverse: bool,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    b, t_len, hdim = dh_time.shape
    g = {name: np.zeros_like(getattr(params, name)) for name in _CELL_FIELDS}
    dx_time = np.zeros((b, t_len, params.input_dim))
    dh_carry = np.zeros((b, hdim))
    dc_carry = np.zeros((b, hdim))
    # cache is in computation order; walk it backwards
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    times = list(order)
    for s in range(t_len - 1, -1, -1):
        t = times[s]
        st = cache[s]
        dh = dh_time[:, t, :] + dh_carry
        do = dh * st.tanh_c
        dc = dh * st.o * (1.0 - st.tanh_c ** 2) + dc_carry
        di = dc * st.g
        dg = dc * st.i
        df = dc * st.c_prev
        dzi = di * st.i * (1.0 - st.i)
        dzf = df * st.f * (1.0 - st.f)
        dzg = dg * (1.0 - st.g ** 2)
        dzo = do * st.o * (1.0 - st.o)
        g["w_ix"] += dzi.T @ st.x
        g["w_fx"] += dzf.T @ st.x
        g["w_cx"] += dzg.T @ st.x
        g["w_ox"] += dzo.T @ st.x
        g["w_ih"] += dzi.T @ st.h_prev
        g["w_fh"] += dzf.T @ st.h_prev
        g["w_ch"] += dzg.T @ st.h_prev
        g["w_oh"] += dzo.T @ st.h_prev
        g["b_i"] += dzi.sum(axis=0)
        g["b_f"] += dzf.sum(axis=0)
        g["b_c"] += dzg.sum(axis=0)
        g["b_o"] += dzo.sum(axis=0)
        dh_carry = dzi @ params.w_ih + dzf @ params.w_fh \
            + dzg @ params.w_ch + dzo @ params.w_oh
        dc_carry = dc * st.f
        dx_time[:, t, :] = dzi @ params.w_ix + dzf @ params.w_fx \
            + dzg @ params.w_cx + dzo @ params.w_ox
    return g, dx_time


class _ForwardCache:
    __slots__ = ("inputs", "dir_caches", "h_seqs", "top", "mask")

    def __init__(self):
        self.inputs: list[np.ndarray] = []
        self.dir_caches: list[tuple[list[_StepCache], list[_StepCache] | None]] = []
        self.h_seqs: list[tuple[np.ndarray, np.ndarray | None]] = []
        self.top: np.ndarray | None = None
        self.mask: np.ndarray | None = None


def _stack_forward(model: BlstmModel, x: np.ndarray,
                   dropout_mask: np.ndarray | None) -> _ForwardCache:
    cache = _ForwardCache()
    inp = x
    for layer in model.layers:
        cache.inputs.append(inp)
        h_fwd, cf = _run_direction(inp, layer.fwd, reverse=False)
        if layer.bwd is not None:
            h_bwd, cb = _run_direction(inp, layer.bwd, reverse=True)
            inp = np.concatenate([h_fwd, h_bwd], axis=2)
        else:
            h_bwd, cb = None, None
            inp = h_fwd
        cache.dir_caches.append((cf, cb))
        cache.h_seqs.append((h_fwd, h_bwd))
    if dropout_mask is not None:
        inp = inp * dropout_mask
    cache.top = inp
    cache.mask = dropout_mask
    return cache


def _project(model: BlstmModel, top: np.ndarray) -> np.ndarray:
    """Head output (B,) from the top-layer feature sequence (B, T, width)."""
    hdim = model.w_fy.shape[1]
    if model.head == "last_step":
        feats_f = top[:, -1, :hdim]
        feats_b = top[:, -1, hdim:] if model.bidirectional else None
    else:  # summary: each direction's final state
        feats_f = top[:, -1, :hdim]
        feats_b = top[:, 0, hdim:] if model.bidirectional else None
    y = feats_f @ model.w_fy.T
    if feats_b is not None:
        y = y + feats_b @ model.w_by.T
    return (y + model.b_y)[:, 0]


def model_forward(model: BlstmModel, x: np.ndarray,
                  dropout_mask: np.ndarray | None = None) -> np.ndarray:
    """Predictions (B,) for a feature batch (B, T, D); no dropout unless given."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[1] != model.input_window or x.shape[2] != model.input_dim:
        raise ValueError(
            f"expected batch shaped (B, {model.input_window}, {model.input_dim}), got {x.shape}")
    return _project(model, _stack_forward(model, x, dropout_mask).top)


def blstm_forward(sequence: np.ndarray, model: BlstmModel) -> float:
    """Prediction for one feature window (T, D)."""
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim != 2 or seq.shape != (model.input_window, model.input_dim):
        raise ValueError(
            f"expected window shaped ({model.input_window}, {model.input_dim}), got {seq.shape}")
    return float(model_forward(model, seq[None, :, :])[0])


def blstm_outputs(sequence: np.ndarray, model: BlstmModel) -> np.ndarray:
    """Per-step head outputs y_t over one window (the last entry is the prediction)."""
    seq = np.asarray(sequence, dtype=float)[None, :, :]
    top = _stack_forward(model, seq, None).top
    hdim = model.w_fy.shape[1]
    y = top[0, :, :hdim] @ model.w_fy.T
    if model.bidirectional:
        y = y + top[0, :, hdim:] @ model.w_by.T
    return (y + model.b_y)[:, 0]


def named_parameters(model: BlstmModel) -> Iterator[tuple[str, np.ndarray]]:
    for li, layer in enumerate(model.layers):
        for name in _CELL_FIELDS:
            yield f"layers.{li}.fwd.{name}", getattr(layer.fwd, name)
        if layer.bwd is not None:
            for name in _CELL_FIELDS:
                yield f"layers.{li}.bwd.{name}", getattr(layer.bwd, name)
    yield "proj.w_fy", model.w_fy
    if model.w_by is not None:
        yield "proj.w_by", model.w_by
    yield "proj.b_y", model.b_y


def gradients(
    model: BlstmModel,
    x: np.ndarray,
    targets: np.ndarray,
    dropout_mask: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean-squared-error loss and its exact BPTT gradient for every parameter.

    ``dropout_mask``, when given, must be the same (inverted-scale) mask
    used in the corresponding forward pass; gradients then match finite
    differences of the masked loss.
    """
    x = np.asarray(x, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(targets) == 0:
        raise ValueError("empty batch")
    b = x.shape[0]
    cache = _stack_forward(model, x, dropout_mask)
    pred = _project(model, cache.top)
    err = pred - targets
    loss = float(np.mean(err ** 2))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss; check model parameters")

    grads: dict[str, np.ndarray] = {}
    dpred = (2.0 / b) * err  # (B,)
    hdim = model.w_fy.shape[1]
    top = cache.top
    t_len = top.shape[1]
    dtop = np.zeros_like(top)
    if model.head == "last_step":
        feats_f = top[:, -1, :hdim]
        grads["proj.w_fy"] = dpred[None, :] @ feats_f
        dtop[:, -1, :hdim] = dpred[:, None] * model.w_fy
        if model.bidirectional:
            feats_b = top[:, -1, hdim:]
            grads["proj.w_by"] = dpred[None, :] @ feats_b
            dtop[:, -1, hdim:] = dpred[:, None] * model.w_by
    else:
        feats_f = top[:, -1, :hdim]
        grads["proj.w_fy"] = dpred[None, :] @ feats_f
        dtop[:, -1, :hdim] = dpred[:, None] * model.w_fy
        if model.bidirectional:
            feats_b = top[:, 0, hdim:]
            grads["proj.w_by"] = dpred[None, :] @ feats_b
            dtop[:, 0, hdim:] = dpred[:, None] * model.w_by
    grads["proj.b_y"] = np.array([dpred.sum()])

    if cache.mask is not None:
        dtop = dtop * cache.mask

    dcur = dtop
    for li in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[li]
        cf, cb = cache.dir_caches[li]
        h = layer.fwd.hidden
        gf, dx_f = _backprop_direction(layer.fwd, cf, dcur[:, :, :h], reverse=False)
        for name, val in gf.items():
            grads[f"layers.{li}.fwd.{name}"] = val
        dx = dx_f
        if layer.bwd is not None:
            gb, dx_b = _backprop_direction(layer.bwd, cb, dcur[:, :, h:], reverse=True)
            for name, val in gb.items():
                grads[f"layers.{li}.bwd.{name}"] = val
            dx = dx_f + dx_b
        dcur = dx
    return loss, grads
