import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eacc.harness import (ClosedLoopReport, PredictionReport, energy_savings, evaluate_predictors, mae,
                          profile_runtime, rmse, run_baseline, run_closed_loop, savings, standard_suite)
from eacc.mpc import MpcConfig
from eacc.rnn import init_model
from eacc.scenario import Corridor, ScenarioLog, generate_scenario, scenario_windows, split_and_normalize
from eacc.vehicle import VehicleParams

P = VehicleParams()


def _constant_log(v=12.0, T=400, n=3):
    t = np.arange(T) * 0.2
    pos = np.column_stack([1000.0 - 40.0 * i + v * t for i in range(n)])
    return ScenarioLog(0.2, pos, np.full((T, n), v), np.full(n, 4.5), np.zeros((T, 0)),
                       Corridor(1e6, ((0.0, 20.0),)), {"seed": 0, "profile": "flat"})


def test_metric_examples():
    assert mae([1, 2], [1, 2]) == 0 and rmse([1, 2], [1, 2]) == 0
    assert mae([1, 2], [1, 4]) == 1.0
    assert rmse([1, 2], [1, 4]) == pytest.approx(math.sqrt(2), rel=1e-15)
    a, b = [0.5, -1.0, 3.0], [1.0, 1.0, 1.0]
    assert mae(a, b) == pytest.approx((0.5 + 2 + 2) / 3)
    with pytest.raises(ValueError):
        mae([1, 2], [1])
    with pytest.raises(ValueError):
        rmse([], [])


@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=40))
def test_rmse_at_least_mae(pairs):
    p, t = zip(*pairs)
    assert rmse(p, t) >= mae(p, t) - 1e-12


def test_constant_speed_log_is_exact_for_baselines():
    rep = evaluate_predictors([], scenario_windows(_constant_log(), "FG1", 25), baselines=("CV", "CA", "ORACLE"))
    for name in ("CV", "CA", "ORACLE"):
        row = rep.get(name, 25)
        assert row["mae"] == 0 and row["rmse"] == 0 and row["mae_final"] == 0


def test_report_rows_and_model_scoring(tmp_path):
    log = generate_scenario(8, "urban", 5, 120.0)
    ws = scenario_windows(log, "FG2", 10)
    _, _, test, norm = split_and_normalize(ws)
    model = init_model("lstm", ws.n_features, 10, "FG2", units=(4,), norm=norm, output_scale=10.0)
    rep = evaluate_predictors([model], test)
    for r in rep.rows:
        assert r["rmse"] >= r["mae"] >= 0 and r["n"] == len(test)
    assert {r["model"] for r in rep.rows} == {"CV", "CA", "LSTM"}
    with open(rep.to_csv(tmp_path / "r.csv")) as fh:
        header = next(csv.reader(fh))
    assert tuple(header) == PredictionReport.COLUMNS
    with pytest.raises(ValueError):
        evaluate_predictors([init_model("lstm", 6, 10, "FG1", units=(4,), norm=norm)], test)
    with pytest.raises(ValueError):
        evaluate_predictors([], test.subset(np.array([], dtype=int)))


def test_savings_examples():
    assert savings(10.0, 10.0) == 0
    assert savings(8.0, 10.0) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        savings(1.0, 0.0)


def test_runtime_profile():
    prof = profile_runtime(np.array([0.01, 0.02, 0.03, 0.04]), 0.2)
    assert prof.mean == pytest.approx(0.025) and prof.max == 0.04 and prof.realtime
    assert prof.p95 == pytest.approx(np.percentile([0.01, 0.02, 0.03, 0.04], 95))
    assert not profile_runtime(np.array([0.1, 0.25]), 0.2).realtime
    with pytest.raises(ValueError):
        profile_runtime(np.array([]))


@pytest.fixture(scope="module")
def constant_runs():
    log = _constant_log()
    cfg = MpcConfig(N=10)
    return log, cfg, {c: run_closed_loop(log, c, cfg, P) for c in ("I", "III")}


def test_cs_and_oracle_agree_on_constant_target(constant_runs):
    _, _, runs = constant_runs
    (t1, r1), (t3, r3) = runs["I"], runs["III"]
    assert np.array_equal(t1.F_t, t3.F_t) and np.array_equal(t1.d_rel, t3.d_rel)
    assert r1.energy_Wh == r3.energy_Wh


def test_steady_following_on_constant_target():
    # The comfort row is soft: at steady state the host sits d_c + zeta1
    # behind, where the slack penalty balances the traction-power saving.
    cfg = MpcConfig()
    trace, row = run_closed_loop(_constant_log(T=1500), "III", cfg, P)
    assert float(np.sum(trace.F_b)) < 1e-3 * float(np.sum(trace.F_t))
    tail = slice(len(trace.t) - 200, None)
    d_c = cfg.d_min + cfg.h_c * trace.v_h[tail]
    assert np.all(trace.d_rel[tail] >= trace.d_s[tail])
    assert np.allclose(trace.d_rel[tail] - d_c, trace.zeta1[tail], atol=0.05)
    assert np.all(trace.zeta1[tail] < 0.15 * d_c)
    assert row.fallback_count == 0


def test_energy_accounting_and_safety_audit(constant_runs):
    _, _, runs = constant_runs
    for trace, row in runs.values():
        assert row.energy_Wh == pytest.approx(trace.energy.sum() / 3600.0, rel=1e-12)
        p = P.P_aux + trace.F_t * trace.v_h / P.eta_drive
        assert np.allclose(trace.energy, p * 0.2, rtol=1e-12)
        ok = ~trace.fallback
        assert np.all(trace.d_rel[ok] >= trace.d_s[ok])


def test_generated_scenario_closed_loop(tmp_path):
    log = generate_scenario(501, "urban", 4, 120.0)
    cfg = MpcConfig(N=10)
    _, base = run_baseline(log, cfg, P)
    trace, row = run_closed_loop(log, "III", cfg, P)
    ok = ~trace.fallback
    assert np.all(trace.d_rel[ok] >= trace.d_s[ok])
    assert row.steps == len(trace.t) and row.mean_solve_s > 0
    energy_savings([row], [base])
    assert row.savings_pct == pytest.approx(savings(row.energy_Wh, base.energy_Wh))
    rep = ClosedLoopReport([base, row])
    assert rep.get(row.scenario, "III", 10) is row
    assert rep.total_energy("III", 10) == row.energy_Wh
    with open(rep.to_csv(tmp_path / "c.csv")) as fh:
        header = next(csv.reader(fh))
    assert "mean_solve_s" not in header
    with open(rep.to_csv(tmp_path / "c.csv", timing=True)) as fh:
        assert "mean_solve_s" in next(csv.reader(fh))
    with open(trace.to_csv(tmp_path / "t.csv")) as fh:
        assert "solve_s" not in next(csv.reader(fh))


def test_closed_loop_argument_checks():
    log = _constant_log()
    with pytest.raises(ValueError):
        run_closed_loop(log, "IV", MpcConfig(N=5), P)
    with pytest.raises(ValueError):
        run_closed_loop(log, "II", MpcConfig(N=5), P)
    with pytest.raises(ValueError):
        run_closed_loop(log, "I", MpcConfig(N=5, dT=0.1), P)
    with pytest.raises(KeyError):
        energy_savings([run_closed_loop(log, "I", MpcConfig(N=5), P)[1]], [])


def test_standard_suite_is_seeded():
    a, b = standard_suite(2, duration=60.0), standard_suite(2, duration=60.0)
    assert [x.meta for x in a] == [x.meta for x in b]
    assert np.array_equal(a[1].velocities, b[1].velocities)
