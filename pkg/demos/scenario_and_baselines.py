"""Generate an urban corridor, then score the CV and CA forecasts on it.

Run from the package root:  python3 demos/scenario_and_baselines.py
"""
import numpy as np

from eacc.harness import evaluate_predictors
from eacc.scenario import generate_scenario, scenario_windows

log = generate_scenario(seed=3, profile="urban", n_vehicles=8, duration=300.0)
print(f"{log.n_vehicles} vehicles, {log.n_steps} steps of {log.dt} s")
print(f"min gap {log.gaps().min():.2f} m, top speed {log.velocities.max():.1f} m/s")

# share of light-steps in each state (1 green, 0.5 yellow, 0 red)
states, counts = np.unique(log.light_states, return_counts=True)
print("light-state shares:", dict(zip(states.tolist(), np.round(counts / counts.sum(), 3).tolist())))

sets = [scenario_windows(log, "FG1", H) for H in (10, 25, 50)]
report = evaluate_predictors([], sets, dt=log.dt)
for r in report.rows:
    print(f"{r['model']:>3} H={r['H']:<3} MAE {r['mae']:.3f}  RMSE {r['rmse']:.3f}  final-step MAE {r['mae_final']:.3f}")
