"""JSON model files: architecture descriptor, row-major weights, NormStats."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..scenario import NormStats
from .cells import GruCellWeights, LstmCellWeights
from .model import Layer, RnnModel

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def model_to_dict(model: RnnModel) -> dict:
    return {
        "format": "eacc-rnn",
        "version": FORMAT_VERSION,
        "architecture": model.architecture(),
        "weights": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in model.params().items()},
        "norm": model.norm.to_dict() if model.norm is not None else None,
        "meta": model.meta,
    }


def save_model(model: RnnModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model), sort_keys=True) + "\n")
    return path


def _array(weights: dict, name: str, shape: tuple) -> np.ndarray:
    try:
        entry = weights[name]
    except KeyError:
        raise ModelFormatError(f"missing weight tensor {name!r}") from None
    if tuple(entry["shape"]) != tuple(shape):
        raise ModelFormatError(f"{name}: stored shape {entry['shape']} != architecture shape {list(shape)}")
    data = np.asarray(entry["data"], dtype=float)
    if data.size != int(np.prod(shape)):
        raise ModelFormatError(f"{name}: {data.size} values for shape {list(shape)}")
    return data.reshape(shape)


def model_from_dict(d: dict) -> RnnModel:
    if d.get("format") != "eacc-rnn":
        raise ModelFormatError("not an eacc-rnn model file")
    if d.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"model file version {d.get('version')} != supported {FORMAT_VERSION}")
    arch, weights = d["architecture"], d["weights"]
    n_in = arch["n_features"]
    layers = []
    for l, (n_h, p) in enumerate(zip(arch["units"], arch["dropouts"])):
        pre = f"layer{l}."
        if arch["cell"] == "lstm":
            cell = LstmCellWeights(*(_array(weights, pre + k, (n_h, n_h + n_in)) for k in ("W_f", "W_i", "W_C", "W_o")),
                                   *(_array(weights, pre + k, (n_h,)) for k in ("b_f", "b_i", "b_C", "b_o")))
        elif arch["cell"] == "gru":
            cell = GruCellWeights(*(_array(weights, pre + k, (n_h, n_in)) for k in ("U_y", "U_s", "U_q")),
                                  *(_array(weights, pre + k, (n_h, n_h)) for k in ("W_y", "W_s", "W_q")),
                                  *(_array(weights, pre + k, (n_h,)) for k in ("a_y", "a_s", "a_q")))
        else:
            raise ModelFormatError(f"unknown cell {arch['cell']!r}")
        layers.append(Layer(cell, p))
        n_in = n_h
    dense = []
    for i, width in enumerate(list(arch["dense"]) + [arch["H"]]):
        dense.append((_array(weights, f"dense{i}.W", (width, n_in)), _array(weights, f"dense{i}.b", (width,))))
        n_in = width
    expected = len(layers) * len(layers[0].cell.arrays()) + 2 * len(dense)
    if len(weights) != expected:
        raise ModelFormatError(f"{len(weights)} weight tensors stored, architecture needs {expected}")
    norm = NormStats.from_dict(d["norm"]) if d.get("norm") is not None else None
    return RnnModel(arch["cell"], layers, dense, arch["H"], arch["group"], norm,
                    arch.get("output_scale", 1.0), d.get("meta", {}))


def load_model(path) -> RnnModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"corrupt model file {path}: {exc}") from None
    return model_from_dict(d)
