"""Stacked recurrent speed predictor: forward pass, MSE loss and BPTT."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..scenario import FeatureWindow, NormStats
from .cells import (
    GruCellWeights,
    LstmCellWeights,
    gru_cell_backward,
    gru_cell_forward,
    lstm_cell_backward,
    lstm_cell_forward,
)

CELLS = ("lstm", "gru")

# (stacked units, dropouts, hidden dense widths, batch size)
PRESETS = {
    "desk": ((32, 32), (0.0, 0.0), (), 128),
    "large-FG1-lstm": ((90, 60, 600, 600), (0.0, 0.0, 0.3, 0.0), (30,), 32),
    "large-FG1-gru": ((450, 600, 60, 60), (0.3, 0.3, 0.0, 0.3), (570,), 32),
    "large-FG2-lstm": ((600, 420, 450, 480), (0.0, 0.25, 0.3, 0.3), (60,), 512),
    "large-FG2-gru": ((300, 600, 600, 180), (0.2, 0.0, 0.0, 0.1), (30,), 512),
}


@dataclass
class Layer:
    cell: LstmCellWeights | GruCellWeights
    dropout: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class RnnModel:
    """Stacked LSTM/GRU layers feeding a reLU dense head with ``H`` outputs.

    The head reads the top layer's hidden state at the last past step.  Every
    dense layer (hidden ones and the output) uses reLU, so forecasts are
    non-negative.  ``output_scale`` multiplies the final activation so that
    unit-range network outputs map to m/s.
    """

    cell: str
    layers: list[Layer]
    dense: list[tuple[np.ndarray, np.ndarray]]
    H: int
    group: str
    norm: NormStats | None = None
    output_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.cell not in CELLS:
            raise ValueError(f"cell must be one of {CELLS}")
        width = self.layers[0].cell.n_x
        for layer in self.layers:
            if layer.cell.n_x != width:
                raise ValueError("stacked layer widths do not chain")
            width = layer.cell.n_h
        for W, b in self.dense:
            if W.shape[1] != width or b.shape != (W.shape[0],):
                raise ValueError("dense head widths do not chain")
            width = W.shape[0]
        if width != self.H:
            raise ValueError(f"dense output width {width} != H={self.H}")

    @property
    def n_features(self) -> int:
        return self.layers[0].cell.n_x

    def params(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of every trainable tensor (stable order)."""
        out = {}
        for l, layer in enumerate(self.layers):
            for k, v in layer.cell.arrays().items():
                out[f"layer{l}.{k}"] = v
        for d, (W, b) in enumerate(self.dense):
            out[f"dense{d}.W"] = W
            out[f"dense{d}.b"] = b
        return out

    def copy(self) -> "RnnModel":
        return RnnModel(self.cell, [Layer(ly.cell.copy(), ly.dropout) for ly in self.layers],
                        [(W.copy(), b.copy()) for W, b in self.dense], self.H, self.group,
                        self.norm, self.output_scale, dict(self.meta))

    def architecture(self) -> dict:
        return {
            "cell": self.cell, "H": self.H, "group": self.group, "n_features": self.n_features,
            "units": [ly.cell.n_h for ly in self.layers],
            "dropouts": [ly.dropout for ly in self.layers],
            "dense": [int(W.shape[0]) for W, _ in self.dense[:-1]],
            "output_scale": self.output_scale,
        }


def _glorot(rng, shape):
    lim = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-lim, lim, shape)


def init_model(cell: str, n_features: int, H: int, group: str, units=(32, 32), dropouts=None,
               dense=(), seed: int = 0, norm: NormStats | None = None,
               output_scale: float = 1.0, out_bias: float = 0.5) -> RnnModel:
    """Glorot-uniform weights and zero biases, except the output layer whose
    bias starts at ``out_bias`` so no reLU output begins dead."""
    rng = np.random.default_rng(seed)
    dropouts = dropouts or (0.0,) * len(units)
    if len(dropouts) != len(units):
        raise ValueError("one dropout rate per stacked layer")
    layers = []
    n_in = n_features
    for n_h, p in zip(units, dropouts):
        if cell == "lstm":
            w = LstmCellWeights(*(_glorot(rng, (n_h, n_h + n_in)) for _ in range(4)),
                                *(np.zeros(n_h) for _ in range(4)))
        elif cell == "gru":
            w = GruCellWeights(*(_glorot(rng, (n_h, n_in)) for _ in range(3)),
                               *(_glorot(rng, (n_h, n_h)) for _ in range(3)),
                               *(np.zeros(n_h) for _ in range(3)))
        else:
            raise ValueError(f"cell must be one of {CELLS}")
        layers.append(Layer(w, p))
        n_in = n_h
    head = []
    for width in tuple(dense) + (H,):
        head.append((_glorot(rng, (width, n_in)), np.zeros(width)))
        n_in = width
    head[-1][1][:] = out_bias
    return RnnModel(cell, layers, head, H, group, norm, output_scale)


def from_preset(preset: str, cell: str, n_features: int, H: int, group: str, seed: int = 0,
                norm: NormStats | None = None, output_scale: float = 1.0) -> tuple[RnnModel, int]:
    """Build a model from a named preset; returns ``(model, batch_size)``.

    The full-size presets are keyed ``large-<group>-<cell>``; pass ``"large"`` to
    pick the one matching ``group`` and ``cell``.
    """
    if preset == "large":
        preset = f"large-{group}-{cell}"
    if preset not in PRESETS:
        raise KeyError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)} or 'large'")
    units, drops, dense, batch = PRESETS[preset]
    model = init_model(cell, n_features, H, group, units, drops, dense, seed, norm, output_scale)
    return model, batch


# ---------------------------------------------------------------------------
# forward / backward

def _as_batch(model: RnnModel, x) -> np.ndarray:
    if isinstance(x, FeatureWindow):
        if not x.normalized:
            raise ValueError("window is not normalised; scale it with the model's NormStats first")
        if x.group != model.group or x.H != model.H:
            raise ValueError(f"window ({x.group}, H={x.H}) does not match model ({model.group}, H={model.H})")
        x = x.past[None]
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != model.n_features:
        raise ValueError(f"expected (batch, steps, {model.n_features}) input, got {x.shape}")
    return x


def forward(model: RnnModel, x, mode: str = "infer", rng: np.random.Generator | None = None):
    """Run the network on normalised input ``(batch, steps, features)``.

    ``mode="train"`` draws inverted-dropout masks from ``rng`` for each layer
    output.  Returns ``(predictions (batch, H), cache)``.
    """
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    x = _as_batch(model, x)
    B, T, _ = x.shape
    train = mode == "train"
    if train and rng is None and any(ly.dropout > 0 for ly in model.layers):
        raise ValueError("train mode with dropout needs an rng")
    cache = {"x": x, "layers": [], "masks": [], "dense": []}
    seq = x
    for layer in model.layers:
        w = layer.cell
        h = np.zeros((B, w.n_h))
        C = np.zeros((B, w.n_h))
        outs = np.empty((B, T, w.n_h))
        steps = []
        for t in range(T):
            if model.cell == "lstm":
                h, C, c = lstm_cell_forward(w, h, C, seq[:, t])
            else:
                h, c = gru_cell_forward(w, h, seq[:, t])
            outs[:, t] = h
            steps.append(c)
        mask = None
        if train and layer.dropout > 0:
            keep = 1.0 - layer.dropout
            mask = (rng.random(outs.shape) < keep) / keep
            outs = outs * mask
        cache["layers"].append(steps)
        cache["masks"].append(mask)
        seq = outs
    a = seq[:, -1]
    for W, b in model.dense:
        pre = a @ W.T + b
        cache["dense"].append((a, pre))
        a = np.maximum(pre, 0.0)
    cache["pred"] = model.output_scale * a
    return cache["pred"], cache


def predict(model: RnnModel, x, batch_size: int = 4096) -> np.ndarray:
    x = _as_batch(model, x)
    out = [forward(model, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out)


def mse_loss(pred, label) -> float:
    pred, label = np.asarray(pred, dtype=float), np.asarray(label, dtype=float)
    if pred.shape != label.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {label.shape}")
    return float(np.mean((pred - label) ** 2))


def backward(model: RnnModel, cache, label) -> dict[str, np.ndarray]:
    """Exact gradients of ``mse_loss(pred, label)`` w.r.t. ``model.params()``,
    where ``pred`` is the output of the forward pass that produced ``cache``."""
    if cache is None or "pred" not in cache or len(cache["layers"]) != len(model.layers):
        raise ValueError("missing or stale forward cache")
    pred, label = cache["pred"], np.asarray(label, dtype=float)
    if pred.shape != label.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {label.shape}")
    grads: dict[str, np.ndarray] = {}
    da = model.output_scale * 2.0 * (pred - label) / pred.size
    for d in range(len(model.dense) - 1, -1, -1):
        W, _ = model.dense[d]
        a_in, pre = cache["dense"][d]
        dpre = da * (pre > 0)
        grads[f"dense{d}.W"] = dpre.T @ a_in
        grads[f"dense{d}.b"] = dpre.sum(axis=0)
        da = dpre @ W

    x = cache["x"]
    B, T, _ = x.shape
    top = model.layers[-1].cell.n_h
    d_out = np.zeros((B, T, top))
    d_out[:, -1] = da
    for l in range(len(model.layers) - 1, -1, -1):
        w = model.layers[l].cell
        mask = cache["masks"][l]
        if mask is not None:
            d_out = d_out * mask
        steps = cache["layers"][l]
        layer_grads = {k: np.zeros_like(v) for k, v in w.arrays().items()}
        d_in = np.zeros((B, T, w.n_x))
        dh = np.zeros((B, w.n_h))
        dC = np.zeros((B, w.n_h))
        for t in range(T - 1, -1, -1):
            if model.cell == "lstm":
                g, dh, dC, dx = lstm_cell_backward(w, steps[t], dh + d_out[:, t], dC)
            else:
                g, dh, dx = gru_cell_backward(w, steps[t], dh + d_out[:, t])
            for k, v in g.items():
                layer_grads[k] += v
            d_in[:, t] = dx
        for k, v in layer_grads.items():
            grads[f"layer{l}.{k}"] = v
        d_out = d_in
    return grads
