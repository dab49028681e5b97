"""Follow a logged target with the MPC under constant-speed (I) and
perfect (III) forecasts, and compare energy with the car-following baseline.

Run from the package root:  python3 demos/closed_loop_energy.py
"""
import numpy as np

from eacc.harness import energy_savings, profile_runtime, run_baseline, run_closed_loop
from eacc.mpc import MpcConfig
from eacc.scenario import generate_scenario
from eacc.vehicle import VehicleParams

params = VehicleParams()
log = generate_scenario(seed=11, profile="mixed", n_vehicles=5, duration=300.0)

for N in (10, 25):
    cfg = MpcConfig(N=N)
    _, base = run_baseline(log, cfg, params)
    print(f"N={N}: baseline {base.energy_Wh:.1f} Wh over {base.steps} steps")
    for crit in ("I", "III"):
        trace, row = run_closed_loop(log, crit, cfg, params)
        energy_savings([row], [base])
        margin = np.min(trace.d_rel - trace.d_s)
        prof = profile_runtime(trace, cfg.dT)
        print(f"  {crit:>3}: {row.energy_Wh:.1f} Wh, savings {row.savings_pct:+.1f}%, "
              f"min safety margin {margin:.2f} m, mean step {1e3 * prof.mean:.1f} ms, fallbacks {row.fallback_count}")
