"""Train a small FG2 LSTM on a few scenarios and compare it with CV and CA.

This is a minutes-scale run; the acceptance test trains on far more data.
Run from the package root:  python3 demos/train_small_lstm.py
"""
from eacc.harness import evaluate_predictors
from eacc.rnn import TrainConfig, from_preset, train
from eacc.scenario import WindowSet, generate_scenario, scenario_windows, split_and_normalize

H = 25
logs = [generate_scenario(s, ("urban", "highway")[s % 2], 6, 240.0) for s in range(4)]
ws = WindowSet.concat([scenario_windows(lg, "FG2", H) for lg in logs])
tr, va, te, norm = split_and_normalize(ws)
print(f"{len(ws)} windows: {len(tr)} train, {len(va)} val, {len(te)} test")

model, batch = from_preset("desk", "lstm", tr.n_features, H, "FG2", seed=0, norm=norm,
                           output_scale=float(norm.max[0]))
best, hist = train(model, tr, va, TrainConfig(max_epochs=4, batch_size=batch, seed=0))
for i, (a, b) in enumerate(zip(hist["train"], hist["val"])):
    print(f"epoch {i}: train MSE {a:.3f}  val MSE {b:.3f}")

for r in evaluate_predictors([best], te).rows:
    print(f"{r['model']:>5} MAE {r['mae']:.3f}  RMSE {r['rmse']:.3f}")
