"""LSTM and GRU cells with hand-written backward passes.

Arrays may carry any leading batch dimensions; the feature axis is last.
Weights act from the right as ``z @ W.T`` so a weight matrix has shape
``(out, in)``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np


def sigmoid(x):
    # exp overflow for very negative x yields inf -> 0, which is the right limit
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


class _Weights:
    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self):
        return type(self)(**{k: v.copy() for k, v in self.arrays().items()})


@dataclass
class LstmCellWeights(_Weights):
    """Gate weights over the concatenation ``[h_prev, x]``."""

    W_f: np.ndarray
    W_i: np.ndarray
    W_C: np.ndarray
    W_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_C: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        shape = self.W_f.shape
        n_h = shape[0]
        if any(W.shape != shape for W in (self.W_i, self.W_C, self.W_o)):
            raise ValueError("LSTM gate matrices must share one shape")
        if shape[1] <= n_h:
            raise ValueError(f"gate matrix {shape} must be n_h x (n_h + n_x)")
        if any(b.shape != (n_h,) for b in (self.b_f, self.b_i, self.b_C, self.b_o)):
            raise ValueError(f"biases must have length {n_h}")

    @property
    def n_h(self) -> int:
        return self.W_f.shape[0]

    @property
    def n_x(self) -> int:
        return self.W_f.shape[1] - self.n_h


@dataclass
class GruCellWeights(_Weights):
    """``U_*`` act on the input, ``W_*`` on the previous state, ``a_*`` are biases."""

    U_y: np.ndarray
    U_s: np.ndarray
    U_q: np.ndarray
    W_y: np.ndarray
    W_s: np.ndarray
    W_q: np.ndarray
    a_y: np.ndarray
    a_s: np.ndarray
    a_q: np.ndarray

    def __post_init__(self):
        n_h, n_x = self.U_y.shape
        if any(U.shape != (n_h, n_x) for U in (self.U_s, self.U_q)):
            raise ValueError("input weights must share one shape")
        if any(W.shape != (n_h, n_h) for W in (self.W_y, self.W_s, self.W_q)):
            raise ValueError(f"recurrent weights must be {n_h} x {n_h}")
        if any(a.shape != (n_h,) for a in (self.a_y, self.a_s, self.a_q)):
            raise ValueError(f"biases must have length {n_h}")

    @property
    def n_h(self) -> int:
        return self.U_y.shape[0]

    @property
    def n_x(self) -> int:
        return self.U_y.shape[1]


# ---------------------------------------------------------------------------
# LSTM

def lstm_cell_forward(w: LstmCellWeights, h_prev, C_prev, x):
    """One LSTM step.  Returns ``(h, C, cache)``."""
    h_prev, C_prev, x = map(np.asarray, (h_prev, C_prev, x))
    if h_prev.shape[-1] != w.n_h or C_prev.shape[-1] != w.n_h or x.shape[-1] != w.n_x:
        raise ValueError(f"dimension mismatch: h {h_prev.shape}, C {C_prev.shape}, x {x.shape} "
                         f"for n_h={w.n_h}, n_x={w.n_x}")
    z = np.concatenate([h_prev, x], axis=-1)
    f = sigmoid(z @ w.W_f.T + w.b_f)
    i = sigmoid(z @ w.W_i.T + w.b_i)
    C_tilde = np.tanh(z @ w.W_C.T + w.b_C)
    C = f * C_prev + i * C_tilde
    o = sigmoid(z @ w.W_o.T + w.b_o)
    tanh_C = np.tanh(C)
    h = o * tanh_C
    cache = {"z": z, "f": f, "i": i, "C_tilde": C_tilde, "o": o, "C_prev": C_prev, "tanh_C": tanh_C}
    return h, C, cache


def lstm_cell_backward(w: LstmCellWeights, cache, dh, dC):
    """Gradients through one LSTM step.

    ``dh``/``dC`` are upstream gradients w.r.t. the step's ``h`` and ``C``.
    Returns ``(grads, dh_prev, dC_prev, dx)`` with weight gradients summed over
    the batch.
    """
    f, i, Ct, o = cache["f"], cache["i"], cache["C_tilde"], cache["o"]
    tanh_C = cache["tanh_C"]
    dC = dC + dh * o * (1.0 - tanh_C**2)
    do = dh * tanh_C * o * (1.0 - o)
    df = dC * cache["C_prev"] * f * (1.0 - f)
    di = dC * Ct * i * (1.0 - i)
    dCt = dC * i * (1.0 - Ct**2)
    z = cache["z"].reshape(-1, cache["z"].shape[-1])
    grads = {}
    dz = 0.0
    for name, d, W in (("f", df, w.W_f), ("i", di, w.W_i), ("C", dCt, w.W_C), ("o", do, w.W_o)):
        d2 = d.reshape(-1, w.n_h)
        grads["W_" + name] = d2.T @ z
        grads["b_" + name] = d2.sum(axis=0)
        dz = dz + d @ W
    n_h = w.n_h
    return grads, dz[..., :n_h], dC * f, dz[..., n_h:]


# ---------------------------------------------------------------------------
# GRU

def gru_cell_forward(w: GruCellWeights, q_prev, x):
    """One GRU step.  Returns ``(q, cache)``.

    The candidate follows ``tanh(U_q x + W_q (s * q_prev + a_q))``: the bias
    sits inside the recurrent product.
    """
    q_prev, x = np.asarray(q_prev), np.asarray(x)
    if q_prev.shape[-1] != w.n_h or x.shape[-1] != w.n_x:
        raise ValueError(f"dimension mismatch: q {q_prev.shape}, x {x.shape} for n_h={w.n_h}, n_x={w.n_x}")
    y = sigmoid(x @ w.U_y.T + q_prev @ w.W_y.T + w.a_y)
    s = sigmoid(x @ w.U_s.T + q_prev @ w.W_s.T + w.a_s)
    r = s * q_prev + w.a_q
    q_tilde = np.tanh(x @ w.U_q.T + r @ w.W_q.T)
    q = (1.0 - y) * q_prev + y * q_tilde
    cache = {"x": x, "q_prev": q_prev, "y": y, "s": s, "r": r, "q_tilde": q_tilde}
    return q, cache


def gru_cell_backward(w: GruCellWeights, cache, dq):
    """Returns ``(grads, dq_prev, dx)``."""
    x, q_prev, y, s, r, qt = (cache[k] for k in ("x", "q_prev", "y", "s", "r", "q_tilde"))
    flat = lambda a: a.reshape(-1, a.shape[-1])  # noqa: E731
    dqt = dq * y * (1.0 - qt**2)
    dy = dq * (qt - q_prev) * y * (1.0 - y)
    dr = dqt @ w.W_q
    ds = dr * q_prev * s * (1.0 - s)
    grads = {
        "U_y": flat(dy).T @ flat(x), "U_s": flat(ds).T @ flat(x), "U_q": flat(dqt).T @ flat(x),
        "W_y": flat(dy).T @ flat(q_prev), "W_s": flat(ds).T @ flat(q_prev), "W_q": flat(dqt).T @ flat(r),
        "a_y": flat(dy).sum(axis=0), "a_s": flat(ds).sum(axis=0), "a_q": flat(dr).sum(axis=0),
    }
    dq_prev = dq * (1.0 - y) + dr * s + dy @ w.W_y + ds @ w.W_s
    dx = dy @ w.U_y + ds @ w.U_s + dqt @ w.U_q
    return grads, dq_prev, dx
