"""Mini-batch ADAM training with validation-based early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..scenario import WindowSet
from .model import RnnModel, backward, forward, mse_loss, predict

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 25
    patience: float = 5        # epochs without val improvement; math.inf disables
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """In-place update of ``params``."""
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m.setdefault(k, np.zeros_like(p))
            v = self.v.setdefault(k, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _as_arrays(data):
    if isinstance(data, WindowSet):
        if not data.normalized:
            raise ValueError("training data must be normalised (use split_and_normalize)")
        return data.arrays()
    x, y = data
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float)


def evaluate_loss(model: RnnModel, data) -> float:
    x, y = _as_arrays(data)
    return mse_loss(predict(model, x), y)


def train(model: RnnModel, train_set, val_set, cfg: TrainConfig):
    """Train a copy of ``model``; returns ``(best_model, history)``.

    ``train_set``/``val_set`` are normalised ``WindowSet`` objects or
    ``(x, y)`` array pairs.  The returned weights are those of the epoch with
    the lowest validation MSE.  ``history`` holds per-epoch ``train`` and
    ``val`` losses and the ``best_epoch`` index.
    """
    x, y = _as_arrays(train_set)
    xv, yv = _as_arrays(val_set)
    if len(x) == 0 or len(xv) == 0:
        raise ValueError("empty training or validation set")
    rng = np.random.default_rng(cfg.seed)
    model = model.copy()
    params = model.params()
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_adam)
    best = (math.inf, model.copy(), -1)
    history = {"train": [], "val": [], "best_epoch": -1}
    stale = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            pred, cache = forward(model, x[idx], "train", rng)
            loss = mse_loss(pred, y[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {start}")
            opt.step(params, backward(model, cache, y[idx]))
            total += loss * len(idx)
        train_loss = total / len(x)
        val_loss = evaluate_loss(model, (xv, yv))
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        history["train"].append(train_loss)
        history["val"].append(val_loss)
        log.info("epoch %d: train %.4f val %.4f", epoch, train_loss, val_loss)
        if val_loss < best[0]:
            best = (val_loss, model.copy(), epoch)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    history["best_epoch"] = best[2]
    return best[1], history
