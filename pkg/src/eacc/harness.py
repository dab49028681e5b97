"""Forecast metrics, closed-loop energy runs and runtime statistics."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .mpc import EaccController, MpcConfig, RoadProfile
from .predictors import ca_trajectory, cv_trajectory, predict_cs
from .rnn.model import RnnModel, forward, predict
from .scenario import HORIZON_PRESETS, ScenarioLog, WindowSet, _idm, generate_scenario, step_features
from .vehicle import HostState, VehicleParams, RoadPoint, power_draw, resistance_force, step_dynamics

log = logging.getLogger(__name__)

CRITERIA = {"I": "CS", "II": "LSTM", "III": "ORACLE"}
WARMUP = max(HORIZON_PRESETS)   # steps skipped at both log ends so every N, H <= 50 fits
SUITE_PROFILES = ("urban", "highway", "mixed")

# car-following law of the energy baseline (human-like follower)
BASELINE_HEADWAY = 1.5
BASELINE_ACCEL = 1.5
BASELINE_DECEL = 2.0


# ---------------------------------------------------------------------------
# metrics

def _pair(pred, truth):
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    return pred, truth


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


@dataclass
class PredictionReport:
    """One row per (model, feature group, horizon).

    ``mae``/``rmse`` pool every forecast step 1..H; the ``*_final`` columns
    use step H only.
    """

    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("model", "group", "H", "n", "mae", "rmse", "mae_final", "rmse_final")

    def add(self, model: str, group: str, H: int, pred, truth) -> dict:
        pred, truth = _pair(pred, truth)
        row = {"model": model, "group": group, "H": int(H), "n": int(pred.shape[0]),
               "mae": mae(pred, truth), "rmse": rmse(pred, truth),
               "mae_final": mae(pred[:, -1], truth[:, -1]), "rmse_final": rmse(pred[:, -1], truth[:, -1])}
        self.rows.append(row)
        return row

    def get(self, model: str, H: int, group: str | None = None) -> dict:
        for r in self.rows:
            if r["model"] == model and r["H"] == H and (group is None or r["group"] == group):
                return r
        raise KeyError((model, H, group))

    def to_csv(self, path) -> Path:
        return _write_csv(path, self.COLUMNS, [[r[c] for c in self.COLUMNS] for r in self.rows])


def evaluate_predictors(models, windows, dt: float = 0.2, baselines=("CV", "CA")) -> PredictionReport:
    """Score trained models and the CV/CA baselines on held-out windows.

    ``windows`` is a WindowSet or a list of them (one per group/horizon).
    Each model is scored on the set matching its group and horizon after
    scaling with the model's own NormStats; baselines use the two most recent
    raw target speeds of every window.
    """
    sets = [windows] if isinstance(windows, WindowSet) else list(windows)
    if not sets or any(len(ws) == 0 for ws in sets):
        raise ValueError("empty test set")
    report = PredictionReport()
    done = set()
    for ws in sets:
        _, truth = ws.with_norm(None).arrays()
        now, prev = ws.last_two_speeds()
        if ws.H not in done:
            for name in baselines:
                if name == "CV":
                    report.add("CV", "-", ws.H, cv_trajectory(now, prev, ws.H), truth)
                elif name == "CA":
                    report.add("CA", "-", ws.H, np.maximum(ca_trajectory(now, prev, dt, ws.H), 0.0), truth)
                elif name == "ORACLE":
                    report.add("ORACLE", "-", ws.H, truth, truth)
                else:
                    raise ValueError(f"unknown baseline {name!r}")
            done.add(ws.H)
    for model in models:
        match = [ws for ws in sets if ws.group == model.group and ws.H == model.H]
        if not match:
            raise ValueError(f"no test windows for model {model.cell}-{model.group} H={model.H}")
        x, truth = match[0].with_norm(model.norm).arrays()
        report.add(model.cell.upper(), model.group, model.H, predict(model, x), truth)
    return report


# ---------------------------------------------------------------------------
# closed loop

@dataclass
class ClosedLoopTrace:
    """Per-control-step record; row k holds the state at step k and the
    forces applied from k to k+1."""

    t: np.ndarray
    v_t: np.ndarray
    v_h: np.ndarray
    d_rel: np.ndarray
    d_s: np.ndarray
    F_t: np.ndarray
    F_b: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray
    energy: np.ndarray          # per-step energy [J]
    status: list
    solve_time: np.ndarray
    infer_time: np.ndarray

    COLUMNS = ("t", "v_t", "v_h", "d_rel", "d_s", "F_t", "F_b", "zeta1", "zeta2", "energy_J", "status")

    @property
    def fallback(self) -> np.ndarray:
        return np.array([s == "infeasible" for s in self.status])

    @property
    def margin(self) -> np.ndarray:
        return self.d_rel - self.d_s

    def to_csv(self, path, timing: bool = False) -> Path:
        cols = list(self.COLUMNS) + (["solve_s", "infer_s"] if timing else [])
        arrays = [getattr(self, c) for c in self.COLUMNS[:9]] + [self.energy]
        rows = []
        for k in range(len(self.t)):
            row = [a[k] for a in arrays] + [self.status[k]]
            if timing:
                row += [self.solve_time[k], self.infer_time[k]]
            rows.append(row)
        return _write_csv(path, cols, rows)


@dataclass
class ClosedLoopRow:
    scenario: str
    criterion: str
    N: int
    steps: int
    energy_Wh: float
    distance_m: float
    min_margin: float
    fallback_count: int
    mean_solve_s: float
    max_solve_s: float
    savings_pct: float | None = None
    savings_per_km_pct: float | None = None   # same ratio on Wh/km (removes end-gap drift)

    TIMING = ("mean_solve_s", "max_solve_s")


@dataclass
class ClosedLoopReport:
    rows: list[ClosedLoopRow] = field(default_factory=list)

    def get(self, scenario: str, criterion: str, N: int) -> ClosedLoopRow:
        for r in self.rows:
            if (r.scenario, r.criterion, r.N) == (scenario, criterion, N):
                return r
        raise KeyError((scenario, criterion, N))

    def total_energy(self, criterion: str, N: int) -> float:
        return float(sum(r.energy_Wh for r in self.rows if r.criterion == criterion and r.N == N))

    def to_csv(self, path, timing: bool = False) -> Path:
        cols = [f for f in ClosedLoopRow.__dataclass_fields__ if timing or f not in ClosedLoopRow.TIMING]
        return _write_csv(path, cols, [[asdict(r)[c] for c in cols] for r in self.rows])


def scenario_key(log_: ScenarioLog) -> str:
    m = log_.meta
    return f"{m.get('profile', 'custom')}-{m.get('seed', 0)}"


def standard_suite(n: int = 10, duration: float = 640.0, seed0: int = 500, n_vehicles: int = 6,
                   dt: float = 0.2) -> list[ScenarioLog]:
    """Seeded nominal scenarios cycling urban/highway/mixed corridors."""
    return [generate_scenario(seed0 + i, SUITE_PROFILES[i % 3], n_vehicles, duration, dt) for i in range(n)]


def _span(log_: ScenarioLog) -> range:
    start, stop = WARMUP, log_.n_steps - WARMUP - 1
    if stop <= start:
        raise ValueError(f"scenario of {log_.n_steps} steps too short for closed-loop runs")
    return range(start, stop)


def _initial_host(log_: ScenarioLog, target: int, cfg: MpcConfig, params: VehicleParams, k0: int):
    v = float(log_.velocities[k0, target])
    d = cfg.d_min + cfg.h_c * v
    s = log_.positions[k0, target] - log_.lengths[target] - d
    F0 = float(np.clip(resistance_force(params, v, float(log_.corridor.grade_at(s)), linearized=True),
                       0.0, params.F_t_max))
    return HostState(v, d, F0), float(s)


def _road_ahead(log_: ScenarioLog, s: float, v_ref: np.ndarray, cfg: MpcConfig) -> RoadProfile:
    pos = s + np.concatenate([[0.0], np.cumsum(v_ref * cfg.dT)])
    cor = log_.corridor
    return RoadProfile(cor.grade_at(pos[:-1]).astype(float), cor.limit_envelope(pos[1:], cfg.b_env))


class _LiveLstm:
    """Per-step inference from the target's feature rows (SPaT is broadcast,
    so future light phases are known to the host)."""

    def __init__(self, model: RnnModel, log_: ScenarioLog, target: int):
        if model.norm is None:
            raise ValueError("model has no normalisation statistics")
        self.model = model
        self.rows = model.norm.apply(step_features(log_, target, model.group, model.H))

    def __call__(self, k: int, N: int) -> np.ndarray:
        H = self.model.H
        if k - H + 1 < 0 or k >= len(self.rows):
            raise ValueError(f"step {k} outside the model's feature range")
        out = forward(self.model, self.rows[k - H + 1:k + 1][None])[0][0]
        if N > H:
            out = np.concatenate([out, np.full(N - H, out[-1])])
        return out[:N]


def run_closed_loop(scenario: ScenarioLog, criterion: str, cfg: MpcConfig, params: VehicleParams,
                    model: RnnModel | None = None, target: int | None = None):
    """Drive the host behind the logged ``target`` with the MPC.

    Criteria: ``I`` constant-speed forecast, ``II`` live RNN forecast,
    ``III`` logged future speeds.  Returns ``(trace, row)``.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {sorted(CRITERIA)}")
    if not np.isclose(scenario.dt, cfg.dT):
        raise ValueError(f"scenario dt {scenario.dt} != controller dT {cfg.dT}")
    target = scenario.n_vehicles - 1 if target is None else target
    if not 0 <= target < scenario.n_vehicles:
        raise IndexError(f"target {target} out of range")
    N = cfg.N
    span = _span(scenario)
    if criterion == "II":
        if model is None:
            raise ValueError("criterion II needs a trained model")
        infer = _LiveLstm(model, scenario, target)
    vel = scenario.velocities[:, target]
    front = scenario.positions[:, target] - scenario.lengths[target]

    ctrl = EaccController(cfg, params)
    state, s = _initial_host(scenario, target, cfg, params, span[0])
    rec = {k: [] for k in ("t", "v_t", "v_h", "d_rel", "F_t", "F_b", "zeta1", "zeta2", "energy",
                           "solve", "infer")}
    status = []
    for k in span:
        t_inf = 0.0
        if criterion == "I":
            fc = predict_cs(vel[k], vel[k - 1], N).v_hat
        elif criterion == "II":
            t0 = time.perf_counter()
            fc = infer(k, N)
            t_inf = time.perf_counter() - t0
        else:
            fc = vel[k + 1:k + N + 1]
        road = _road_ahead(scenario, s, fc, cfg)
        F_t, F_b, sol = ctrl.step(state, fc, road, v_t_now=float(vel[k]))
        if state.d_rel < cfg.d_min + cfg.h_m * state.v_h and sol.status != "infeasible":
            # already inside the minimum distance: treat as an emergency interval
            F_t, F_b, sol.status = 0.0, params.F_b_max, "infeasible"
            ctrl.fallbacks += 1
            ctrl.reset()
        for key, val in (("t", k * cfg.dT), ("v_t", vel[k]), ("v_h", state.v_h), ("d_rel", state.d_rel),
                         ("F_t", F_t), ("F_b", F_b), ("zeta1", sol.zeta1[0]), ("zeta2", sol.zeta2[0]),
                         ("energy", power_draw(params, state.v_h, F_t) * cfg.dT),
                         ("solve", sol.solve_time), ("infer", t_inf)):
            rec[key].append(val)
        status.append(sol.status)
        nxt = step_dynamics(params, state, F_t, F_b, RoadPoint(float(road.arrays(1)[0][0]), 50.0),
                            float(vel[k]), float(vel[k + 1]), cfg.dT)
        s_new = s + 0.5 * (state.v_h + nxt.v_h) * cfg.dT
        state = HostState(nxt.v_h, float(front[k + 1] - s_new), F_t)
        s = s_new
    trace = _make_trace(rec, status, cfg, params)
    row = _summarise(scenario_key(scenario), criterion, N, trace, s - _initial_host(
        scenario, target, cfg, params, span[0])[1])
    log.info("%s %s N=%d: %.1f Wh, %d fallbacks", row.scenario, criterion, N, row.energy_Wh, row.fallback_count)
    return trace, row


def _make_trace(rec, status, cfg: MpcConfig, params: VehicleParams) -> ClosedLoopTrace:
    a = {k: np.asarray(v, dtype=float) for k, v in rec.items()}
    return ClosedLoopTrace(t=a["t"], v_t=a["v_t"], v_h=a["v_h"], d_rel=a["d_rel"],
                           d_s=cfg.d_min + cfg.h_m * a["v_h"], F_t=a["F_t"], F_b=a["F_b"],
                           zeta1=a["zeta1"], zeta2=a["zeta2"], energy=a["energy"], status=status,
                           solve_time=a["solve"], infer_time=a["infer"])


def _summarise(key: str, criterion: str, N: int, trace: ClosedLoopTrace, distance: float) -> ClosedLoopRow:
    ok = ~trace.fallback
    margin = float(np.min(trace.margin[ok])) if ok.any() else float("nan")
    step_time = trace.solve_time + trace.infer_time
    return ClosedLoopRow(scenario=key, criterion=criterion, N=N, steps=len(trace.t),
                         energy_Wh=float(trace.energy.sum() / 3600.0), distance_m=float(distance),
                         min_margin=margin, fallback_count=int((~ok).sum()),
                         mean_solve_s=float(step_time.mean()), max_solve_s=float(step_time.max()))


def run_baseline(scenario: ScenarioLog, cfg: MpcConfig, params: VehicleParams, target: int | None = None):
    """The generator's car-following law driving the host vehicle model
    (no randomness), over the same span and start as the MPC runs."""
    if not np.isclose(scenario.dt, cfg.dT):
        raise ValueError(f"scenario dt {scenario.dt} != controller dT {cfg.dT}")
    target = scenario.n_vehicles - 1 if target is None else target
    span = _span(scenario)
    vel = scenario.velocities[:, target]
    front = scenario.positions[:, target] - scenario.lengths[target]
    state, s = _initial_host(scenario, target, cfg, params, span[0])
    s0 = s
    cor = scenario.corridor
    rec = {k: [] for k in ("t", "v_t", "v_h", "d_rel", "F_t", "F_b", "zeta1", "zeta2", "energy",
                           "solve", "infer")}
    for k in span:
        theta = float(cor.grade_at(s))
        v0 = float(cor.limit_envelope(s, BASELINE_DECEL))
        acc = float(_idm(state.v_h, v0, state.d_rel, state.v_h - vel[k], BASELINE_HEADWAY,
                         BASELINE_ACCEL, BASELINE_DECEL))
        force = params.m_eq * acc + resistance_force(params, state.v_h, theta, linearized=True)
        F_t = float(np.clip(force, 0.0, params.F_t_max))
        F_b = float(np.clip(-force, 0.0, params.F_b_max))
        for key, val in (("t", k * cfg.dT), ("v_t", vel[k]), ("v_h", state.v_h), ("d_rel", state.d_rel),
                         ("F_t", F_t), ("F_b", F_b), ("zeta1", 0.0), ("zeta2", 0.0),
                         ("energy", power_draw(params, state.v_h, F_t) * cfg.dT), ("solve", 0.0),
                         ("infer", 0.0)):
            rec[key].append(val)
        nxt = step_dynamics(params, state, F_t, F_b, RoadPoint(theta, 50.0), float(vel[k]),
                            float(vel[k + 1]), cfg.dT)
        s_new = s + 0.5 * (state.v_h + nxt.v_h) * cfg.dT
        state = HostState(nxt.v_h, float(front[k + 1] - s_new), F_t)
        s = s_new
    trace = _make_trace(rec, ["baseline"] * len(rec["t"]), cfg, params)
    row = _summarise(scenario_key(scenario), "baseline", cfg.N, trace, s - s0)
    row.min_margin = float(np.min(trace.margin))
    row.fallback_count = 0
    return trace, row


def savings(energy: float, baseline: float) -> float:
    """``100 (E_base - E) / E_base``."""
    if baseline <= 0:
        raise ValueError("baseline energy must be positive")
    return 100.0 * (baseline - energy) / baseline


def energy_savings(rows, baseline_rows) -> list[float]:
    """Savings of each row against the baseline of its scenario.

    Sets ``savings_pct`` (and the per-km variant) on every row as a side
    effect and returns the ``savings_pct`` values.
    """
    base = {r.scenario: r for r in baseline_rows}
    out = []
    for r in rows:
        if r.scenario not in base:
            raise KeyError(f"no baseline for scenario {r.scenario}")
        b = base[r.scenario]
        r.savings_pct = savings(r.energy_Wh, b.energy_Wh)
        if r.distance_m > 0 and b.distance_m > 0:
            r.savings_per_km_pct = savings(r.energy_Wh / r.distance_m, b.energy_Wh / b.distance_m)
        out.append(r.savings_pct)
    return out


class RuntimeProfile(NamedTuple):
    mean: float
    p95: float
    max: float
    realtime: bool


def profile_runtime(trace: ClosedLoopTrace | np.ndarray, dT: float = 0.2) -> RuntimeProfile:
    """Solve + inference wall-clock statistics per step; ``realtime`` when
    every step finishes within ``dT``."""
    times = trace.solve_time + trace.infer_time if isinstance(trace, ClosedLoopTrace) else np.asarray(trace, float)
    if times.size == 0:
        raise ValueError("empty trace")
    mx = float(times.max())
    return RuntimeProfile(float(times.mean()), float(np.percentile(times, 95)), mx, mx < dT)


# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path
