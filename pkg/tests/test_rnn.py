import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eacc.rnn import (GruCellWeights, Layer, LstmCellWeights, ModelFormatError, RnnModel, TrainConfig,
                      TrainingDiverged, backward, forward, from_preset, gru_cell_forward, init_model,
                      load_model, lstm_cell_forward, mse_loss, predict, save_model, train)
from eacc.scenario import FeatureWindow, NormStats
from oracles import finite_difference, gru_scalar, lstm_scalar


def _lstm(n_h, n_x, rng=None, scale=1.0):
    if rng is None:
        return LstmCellWeights(*(np.zeros((n_h, n_h + n_x)) for _ in range(4)), *(np.zeros(n_h) for _ in range(4)))
    return LstmCellWeights(*(scale * rng.standard_normal((n_h, n_h + n_x)) for _ in range(4)),
                           *(scale * rng.standard_normal(n_h) for _ in range(4)))


def _gru(n_h, n_x, rng=None, scale=1.0):
    if rng is None:
        return GruCellWeights(*(np.zeros((n_h, n_x)) for _ in range(3)), *(np.zeros((n_h, n_h)) for _ in range(3)),
                              *(np.zeros(n_h) for _ in range(3)))
    return GruCellWeights(*(scale * rng.standard_normal((n_h, n_x)) for _ in range(3)),
                          *(scale * rng.standard_normal((n_h, n_h)) for _ in range(3)),
                          *(scale * rng.standard_normal(n_h) for _ in range(3)))


# -- cells ------------------------------------------------------------------

def test_lstm_zero_weights():
    c = np.array([0.7, -1.2])
    h, C, cache = lstm_cell_forward(_lstm(2, 3), np.zeros(2), c, np.ones(3))
    assert np.all(cache["f"] == 0.5) and np.all(cache["i"] == 0.5) and np.all(cache["o"] == 0.5)
    assert np.all(cache["C_tilde"] == 0)
    assert np.allclose(C, 0.5 * c) and np.allclose(h, 0.5 * np.tanh(0.5 * c))


def test_lstm_forget_saturation():
    rng = np.random.default_rng(0)
    w = _lstm(3, 2, rng)
    w.b_f[:] = -50.0
    _, C, cache = lstm_cell_forward(w, np.zeros(3), np.array([5.0, -5.0, 2.0]), np.zeros(2))
    assert np.allclose(C, cache["i"] * cache["C_tilde"], atol=1e-12)


def test_gru_zero_weights():
    q_prev = np.array([0.4, -0.8])
    q, cache = gru_cell_forward(_gru(2, 3), q_prev, np.ones(3))
    assert np.all(cache["y"] == 0.5) and np.all(cache["s"] == 0.5) and np.all(cache["q_tilde"] == 0)
    assert np.allclose(q, 0.5 * q_prev)


def test_gru_update_saturation():
    rng = np.random.default_rng(1)
    w = _gru(3, 2, rng)
    w.a_y[:] = 50.0
    q, cache = gru_cell_forward(w, rng.standard_normal(3), rng.standard_normal(2))
    assert np.allclose(q, cache["q_tilde"], atol=1e-12)


def test_cell_dimension_mismatch():
    with pytest.raises(ValueError):
        lstm_cell_forward(_lstm(2, 3), np.zeros(2), np.zeros(2), np.zeros(4))
    with pytest.raises(ValueError):
        gru_cell_forward(_gru(2, 3), np.zeros(3), np.zeros(3))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), n_h=st.integers(1, 5), n_x=st.integers(1, 5))
def test_cells_match_scalar_loops_and_gate_ranges(seed, n_h, n_x):
    rng = np.random.default_rng(seed)
    w = _lstm(n_h, n_x, rng)
    h0, C0, x = rng.standard_normal(n_h), rng.standard_normal(n_h), rng.standard_normal(n_x)
    h, C, cache = lstm_cell_forward(w, h0, C0, x)
    W = {"f": w.W_f, "i": w.W_i, "C": w.W_C, "o": w.W_o}
    b = {"f": w.b_f, "i": w.b_i, "C": w.b_C, "o": w.b_o}
    h_ref, C_ref = lstm_scalar({k: v.tolist() for k, v in W.items()}, {k: v.tolist() for k, v in b.items()},
                               h0.tolist(), C0.tolist(), x.tolist())
    assert np.allclose(h, h_ref, rtol=0, atol=1e-12) and np.allclose(C, C_ref, rtol=0, atol=1e-12)
    for g in ("f", "i", "o"):
        assert np.all((cache[g] > 0) & (cache[g] < 1))
    assert np.all(np.abs(cache["C_tilde"]) <= 1)

    g = _gru(n_h, n_x, rng)
    q, gc = gru_cell_forward(g, h0, x)
    q_ref = gru_scalar({"y": g.U_y.tolist(), "s": g.U_s.tolist(), "q": g.U_q.tolist()},
                       {"y": g.W_y.tolist(), "s": g.W_s.tolist(), "q": g.W_q.tolist()},
                       {"y": g.a_y.tolist(), "s": g.a_s.tolist(), "q": g.a_q.tolist()}, h0.tolist(), x.tolist())
    assert np.allclose(q, q_ref, rtol=0, atol=1e-12)
    lo, hi = np.minimum(h0, gc["q_tilde"]), np.maximum(h0, gc["q_tilde"])
    assert np.all(q >= lo - 1e-15) and np.all(q <= hi + 1e-15)


# -- model ------------------------------------------------------------------

def test_forward_equals_chained_scalar_oracles():
    rng = np.random.default_rng(4)
    model = init_model("lstm", 3, 2, "FG1", units=(4, 4), seed=4, out_bias=0.3)
    x = rng.standard_normal((5, 3))
    pred, _ = forward(model, x)
    seq = x.tolist()
    for layer in model.layers:
        w = layer.cell
        W = {"f": w.W_f.tolist(), "i": w.W_i.tolist(), "C": w.W_C.tolist(), "o": w.W_o.tolist()}
        b = {"f": w.b_f.tolist(), "i": w.b_i.tolist(), "C": w.b_C.tolist(), "o": w.b_o.tolist()}
        h, C, out = [0.0] * 4, [0.0] * 4, []
        for xt in seq:
            h, C = lstm_scalar(W, b, h, C, xt)
            out.append(h)
        seq = out
    (Wd, bd), = model.dense
    ref = [max(0.0, sum(Wd[j, k] * seq[-1][k] for k in range(4)) + bd[j]) for j in range(2)]
    assert np.allclose(pred[0], ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("cell", ["lstm", "gru"])
def test_no_dropout_train_equals_infer(cell):
    model = init_model(cell, 4, 3, "FG1", units=(5, 5), seed=2)
    x = np.random.default_rng(0).standard_normal((6, 7, 4))
    a, _ = forward(model, x, "train", np.random.default_rng(0))
    b, _ = forward(model, x, "infer")
    assert np.array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_relu_head_non_negative(seed):
    rng = np.random.default_rng(seed)
    model = init_model("gru", 3, 4, "FG1", units=(4,), dense=(6,), seed=seed)
    for p in model.params().values():
        p += 3.0 * rng.standard_normal(p.shape)
    assert np.all(predict(model, rng.standard_normal((8, 5, 3))) >= 0)


def test_forward_input_checks():
    model = init_model("lstm", 3, 2, "FG1", units=(4,))
    with pytest.raises(ValueError):
        forward(model, np.zeros((1, 5, 4)))
    with pytest.raises(ValueError):
        forward(model, FeatureWindow("FG1", 2, np.zeros((2, 3)), np.zeros(2), normalized=False))
    with pytest.raises(ValueError):
        forward(model, FeatureWindow("FG2", 2, np.zeros((2, 3)), np.zeros(2), normalized=True))
    with pytest.raises(ValueError):
        forward(model, np.zeros((1, 5, 3)), mode="eval")
    pred, _ = forward(model, FeatureWindow("FG1", 2, np.zeros((2, 3)), np.zeros(2), normalized=True))
    assert pred.shape == (1, 2)


def test_model_width_checks():
    with pytest.raises(ValueError):
        RnnModel("lstm", [Layer(_lstm(3, 2)), Layer(_lstm(3, 4))], [(np.zeros((2, 3)), np.zeros(2))], 2, "FG1")
    with pytest.raises(ValueError):
        RnnModel("lstm", [Layer(_lstm(3, 2))], [(np.zeros((4, 3)), np.zeros(4))], 2, "FG1")
    with pytest.raises(ValueError):
        Layer(_lstm(3, 2), dropout=1.0)


def test_mse_examples():
    assert mse_loss([1.0, 2.0], [1.0, 2.0]) == 0
    assert mse_loss([0, 0], [1, 3]) == 5
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(7), rng.standard_normal(7)
    assert mse_loss(a, b) == pytest.approx(sum((p - q) ** 2 for p, q in zip(a, b)) / 7, rel=1e-14)
    with pytest.raises(ValueError):
        mse_loss([1, 2], [1])


# -- backward -----------------------------------------------------------------

def test_zero_loss_zero_gradients():
    model = init_model("gru", 3, 2, "FG1", units=(4,), seed=1)
    x = np.random.default_rng(1).standard_normal((3, 4, 3))
    pred, cache = forward(model, x, "train")
    grads = backward(model, cache, pred.copy())
    assert all(np.all(g == 0) for g in grads.values())


def test_dense_bias_gradient_by_hand():
    model = init_model("lstm", 2, 1, "FG1", units=(3,), seed=0, out_bias=0.4)
    x = np.random.default_rng(3).standard_normal((4, 5, 2))
    pred, cache = forward(model, x, "train")
    y = np.array([[0.1], [2.0], [0.3], [1.5]])
    _, pre = cache["dense"][0]
    expected = np.mean(2 * (pred - y) * (pre > 0))
    assert backward(model, cache, y)["dense0.b"][0] == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("cell", ["lstm", "gru"])
def test_gradients_match_finite_differences(cell):
    rng = np.random.default_rng(5)
    model = init_model(cell, 3, 3, "FG1", units=(4, 3), dropouts=(0.3, 0.0), dense=(5,), seed=5)
    for p in model.params().values():
        p += 0.1 * rng.standard_normal(p.shape)
    x = rng.standard_normal((3, 4, 3))
    y = rng.uniform(0.5, 1.5, (3, 3))

    def loss():
        return mse_loss(forward(model, x, "train", np.random.default_rng(9))[0], y)

    _, cache = forward(model, x, "train", np.random.default_rng(9))
    grads = backward(model, cache, y)
    fd = finite_difference(loss, model.params())
    for k in grads:
        scale = max(np.linalg.norm(grads[k]), np.linalg.norm(fd[k]), 1e-12)
        assert np.linalg.norm(grads[k] - fd[k]) / scale < 1e-5, k


def test_backward_rejects_stale_cache():
    model = init_model("lstm", 2, 1, "FG1", units=(3,))
    with pytest.raises(ValueError):
        backward(model, None, np.zeros((1, 1)))
    other = init_model("lstm", 2, 1, "FG1", units=(3, 3))
    _, cache = forward(other, np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        backward(model, cache, np.zeros((1, 1)))


def test_inverted_dropout_expectation():
    # A large output bias keeps the reLU head linear, so the prediction is an
    # affine function of the dropped hidden state and its mean over masks
    # must equal the undropped (infer-mode) prediction.
    model = init_model("lstm", 2, 1, "FG1", units=(6,), dropouts=(0.4,), seed=0, out_bias=50.0)
    x = np.random.default_rng(0).standard_normal((1, 3, 2))
    clean, _ = forward(model, x)
    n = 10_000
    samples, _ = forward(model, np.repeat(x, n, axis=0), "train", np.random.default_rng(1))
    assert np.all(samples > 0)
    mean, sigma = samples.mean(), samples.std() / math.sqrt(n)
    assert abs(mean - clean[0, 0]) <= 3 * sigma


def test_forward_dropout_mask_statistics():
    model = init_model("gru", 2, 1, "FG1", units=(4, 4), dropouts=(0.5, 0.0), seed=0)
    _, cache = forward(model, np.zeros((500, 3, 2)), "train", np.random.default_rng(0))
    mask = cache["masks"][0]
    assert set(np.unique(mask)) <= {0.0, 2.0}
    assert abs(mask.mean() - 1.0) < 3 * 1.0 / math.sqrt(mask.size)
    assert cache["masks"][1] is None


# -- training -----------------------------------------------------------------

def _toy_data(n, seed=0, H=2):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (n, 4, 3))
    y = np.column_stack([x[:, -1, 0] + 0.5, x[:, -1, 1] + 0.2])[:, :H]
    return x, y


def test_zero_learning_rate_keeps_weights():
    model = init_model("lstm", 3, 2, "FG1", units=(4,), seed=0)
    data = _toy_data(20)
    best, hist = train(model, data, data, TrainConfig(learning_rate=0.0, max_epochs=3, batch_size=8))
    for k, v in model.params().items():
        assert np.array_equal(best.params()[k], v)
    assert np.allclose(hist["train"], hist["train"][0], rtol=1e-12)
    assert np.allclose(hist["val"], hist["val"][0], rtol=0, atol=0)


def test_memorizes_single_sample():
    model = init_model("lstm", 3, 2, "FG1", units=(8,), seed=0)
    x, y = _toy_data(1)
    cfg = TrainConfig(learning_rate=1e-2, max_epochs=200, batch_size=1, patience=math.inf)
    _, hist = train(model, (x, y), (x, y), cfg)
    assert hist["train"][-1] < 1e-3


def test_training_deterministic():
    data = _toy_data(30)
    cfg = TrainConfig(max_epochs=3, batch_size=7, seed=4)
    model = init_model("gru", 3, 2, "FG1", units=(4,), dropouts=(0.2,), seed=1)
    _, h1 = train(model, data, data, cfg)
    _, h2 = train(model, data, data, cfg)
    assert h1 == h2


def test_early_stopping_and_best_epoch():
    x, y = _toy_data(40)
    xv, yv = _toy_data(10, seed=1)
    cfg = TrainConfig(learning_rate=1e-2, max_epochs=200, batch_size=8, patience=2)
    model = init_model("lstm", 3, 2, "FG1", units=(4,), seed=0)
    best, hist = train(model, (x, y), (xv, yv), cfg)
    assert len(hist["val"]) < 200
    assert hist["val"][hist["best_epoch"]] == min(hist["val"])
    assert mse_loss(predict(best, xv), yv) == pytest.approx(min(hist["val"]), rel=1e-12)


def test_divergence_aborts():
    model = init_model("lstm", 3, 2, "FG1", units=(4,), seed=0)
    x, y = _toy_data(5)
    y[0, 0] = np.inf
    with pytest.raises(TrainingDiverged):
        train(model, (x, y), (x, y), TrainConfig(max_epochs=1))


def test_train_config_checks():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        train(init_model("lstm", 3, 2, "FG1"), (np.zeros((0, 4, 3)), np.zeros((0, 2))), _toy_data(3), TrainConfig())


# -- persistence ------------------------------------------------------------

@pytest.mark.parametrize("cell,preset", [("lstm", "desk"), ("gru", "large-FG2-gru")])
def test_save_load_round_trip(tmp_path, cell, preset):
    norm = NormStats(np.zeros(8 + 3), np.ones(8 + 3))
    if preset == "desk":
        model, _ = from_preset(preset, cell, 11, 3, "FG2", seed=1, norm=norm, output_scale=12.5)
    else:
        model = init_model(cell, 11, 3, "FG2", units=(5, 4), dropouts=(0.1, 0.0), dense=(6,), seed=1,
                           norm=norm, output_scale=12.5)
    path = save_model(model, tmp_path / "sub" / "m.json")
    back = load_model(path)
    x = np.random.default_rng(0).uniform(0, 1, (4, 3, 11))
    assert np.array_equal(predict(back, x), predict(model, x))
    assert back.architecture() == model.architecture()
    assert np.array_equal(back.norm.max, norm.max)
    assert save_model(back, tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_stored_shapes_follow_architecture(tmp_path):
    model = init_model("lstm", 3, 2, "FG1", units=(4, 5), dense=(6,))
    doc = json.loads(save_model(model, tmp_path / "m.json").read_text())
    arch = doc["architecture"]
    n_in = arch["n_features"]
    for l, n_h in enumerate(arch["units"]):
        assert doc["weights"][f"layer{l}.W_f"]["shape"] == [n_h, n_h + n_in]
        n_in = n_h
    for d, width in enumerate(arch["dense"] + [arch["H"]]):
        assert doc["weights"][f"dense{d}.W"]["shape"] == [width, n_in]
        n_in = width


def test_corrupt_files_rejected(tmp_path):
    model = init_model("lstm", 3, 2, "FG1", units=(4,))
    path = save_model(model, tmp_path / "m.json")
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ModelFormatError):
        load_model(path)
    doc = json.loads(text)
    doc["version"] = 999
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError):
        load_model(path)
    doc = json.loads(text)
    doc["weights"]["layer0.W_f"]["shape"] = [1, 1]
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_preset_lookup():
    model, batch = from_preset("large", "lstm", 11, 3, "FG2")
    assert batch == 512 and [ly.cell.n_h for ly in model.layers] == [600, 420, 450, 480]
    with pytest.raises(KeyError):
        from_preset("huge", "lstm", 6, 3, "FG1")
