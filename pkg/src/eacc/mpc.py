"""Energy-minimising receding-horizon car-following controller.

Each control step condenses the affine host dynamics into a QP over the
stacked decision vector ``[F_t, F_b, zeta1, zeta2]`` (forces in kN, zeta1 in
m) and solves it with an ADMM operator-splitting method (OSQP-style, with
active-set polishing).  Constraint rows, top to bottom:

    velocity box         v_min <= v_k <= v_max                 (k = 1..N)
    variable boxes       0 <= F_t <= F_t_max, 0 <= F_b <= F_b_max, zeta >= 0
    traction rate        +-(F_t,k - F_t,k-1) - zeta2_k <= dF_t_max  (anchored at F_t_prev)
    safety (hard)        d_k - h_m v_k >= d_min + safety_margin
    comfort (soft)       d_k - h_c v_k - zeta1_k <= d_min

The traction-power term is linearised around the target-speed forecast so
the objective stays convex.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .predictors import SpeedForecast
from .vehicle import HostState, VehicleParams

log = logging.getLogger(__name__)

KN = 1000.0  # force unit of the QP variables [N]


@dataclass
class MpcConfig:
    N: int = 25
    dT: float = 0.2
    eps1: float = 1e-3        # braking penalty [W/N^2]
    eps2: float = 100.0       # comfort-slack penalty [W/m^2]
    eps3: float = 1e-4        # traction-rate slack penalty [W/N^2]
    d_min: float = 4.0
    h_m: float = 0.8
    h_c: float = 2.0
    v_min: float = 0.0
    b_env: float = 2.0        # decel used to anticipate lower limits ahead [m/s^2]
    safety_margin: float = 0.05  # tightening of the hard gap row against solver round-off [m]
    tol_prim: float = 1e-4
    tol_dual: float = 1e-4
    max_iter: int = 4000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    polish: bool = True
    polish_from: float = 1e-2  # residual level at which active-set polishing is attempted
    relinearize: bool = False

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.dT <= 0:
            raise ValueError("dT must be positive")
        if min(self.eps1, self.eps2, self.eps3) < 0:
            raise ValueError("cost weights must be >= 0")
        if not self.h_c > self.h_m >= 0:
            raise ValueError("need h_c > h_m >= 0")
        if self.d_min <= 0:
            raise ValueError("d_min must be positive")


@dataclass
class RoadProfile:
    """Grade and speed limit along the horizon.

    ``theta[k]`` applies to the transition k -> k+1 and ``v_max[k]`` bounds
    the host speed at step k+1.  Scalars are broadcast.
    """

    theta: np.ndarray | float = 0.0
    v_max: np.ndarray | float = 13.9

    def arrays(self, N: int) -> tuple[np.ndarray, np.ndarray]:
        out = []
        for a in (self.theta, self.v_max):
            a = np.asarray(a, dtype=float)
            a = np.full(N, float(a)) if a.ndim == 0 else a
            if len(a) < N:
                raise ValueError(f"road profile of length {len(a)} shorter than N={N}")
            out.append(a[:N])
        return out[0], out[1]


@dataclass
class MpcProblem:
    """One horizon instance.

    With ``v_t_now`` given, ``forecast[j]`` is the target speed at step j+1.
    Without it, ``forecast[0]`` is taken as the current target speed and the
    last entry is held for the final step.
    """

    state: HostState
    forecast: SpeedForecast | np.ndarray
    road: RoadProfile
    params: VehicleParams
    v_t_now: float | None = None

    def __post_init__(self):
        v = self.forecast.v_hat if isinstance(self.forecast, SpeedForecast) else self.forecast
        self.forecast = np.asarray(v, dtype=float)
        if self.forecast.ndim != 1 or len(self.forecast) == 0:
            raise ValueError("forecast must be a non-empty 1-D sequence")

    def target_speeds(self, N: int) -> np.ndarray:
        """Target speeds at steps 0..N."""
        if len(self.forecast) < N:
            raise ValueError(f"forecast of length {len(self.forecast)} shorter than N={N}")
        if self.v_t_now is not None:
            return np.concatenate([[self.v_t_now], self.forecast[:N]])
        return np.concatenate([self.forecast[:N], self.forecast[N - 1:N]])


@dataclass
class QP:
    """``min 0.5 x'Px + q'x  s.t.  l <= Ax <= u`` plus the condensed state maps."""

    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    N: int = 0
    G: np.ndarray | None = None        # v[1..N] = G (F_t - F_b) + v_free
    v_free: np.ndarray | None = None
    Md: np.ndarray | None = None       # d[1..N] = Md v[1..N] + d_free
    d_free: np.ndarray | None = None
    rows: dict = field(default_factory=dict)
    relaxed_vmax: bool = False
    feasible: bool = True              # hard rows known satisfiable

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def states(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        N = self.N
        if self.G is None:
            return np.empty(0), np.empty(0)
        v = self.G @ (x[:N] - x[N:2 * N]) + self.v_free
        d = self.Md @ v + self.d_free
        return v, d

    def objective(self, x: np.ndarray) -> float:
        """Objective in W for condensed EACC problems (the QP itself is in
        kW); the plain QP value otherwise."""
        val = float(0.5 * x @ self.P @ x + self.q @ x)
        return KN * val if self.G is not None else val


@dataclass
class MpcSolution:
    F_t: np.ndarray
    F_b: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray
    v_h: np.ndarray
    d_rel: np.ndarray
    objective: float
    status: str
    prim_res: float
    dual_res: float
    iterations: int
    solve_time: float
    polished: bool = False
    x: np.ndarray | None = None
    y: np.ndarray | None = None


# ---------------------------------------------------------------------------
# condensing

def _dynamics(cfg: MpcConfig, params: VehicleParams):
    a = 1.0 - cfg.dT * params.aero_coef * params.p1 / params.m_eq
    beta = KN * cfg.dT / params.m_eq
    return a, beta


def _const_force(params: VehicleParams, theta: np.ndarray) -> np.ndarray:
    """Velocity-independent part of the linearised resistance [N]."""
    return (params.c_r * params.m_v * params.g * np.cos(theta) + params.aero_coef * params.p2
            + params.m_v * params.g * np.sin(theta))


def _structure(cfg: MpcConfig, params: VehicleParams, N: int):
    """Problem data that does not depend on the step (cached by the controller)."""
    a, beta = _dynamics(cfg, params)
    j = np.arange(N)
    pw = np.where(j[:, None] >= j[None, :], a ** np.maximum(j[:, None] - j[None, :], 0), 0.0)
    G = beta * pw
    Md = -cfg.dT * np.tril(np.ones((N, N)), -1) - 0.5 * cfg.dT * np.eye(N)
    I, Z = np.eye(N), np.zeros((N, N))
    D = np.eye(N) - np.eye(N, k=-1)
    Sgap_m = (Md - cfg.h_m * I) @ G
    Sgap_c = (Md - cfg.h_c * I) @ G
    A = np.vstack([
        np.hstack([G, -G, Z, Z]),
        np.eye(4 * N),
        np.hstack([D, Z, Z, -I]),
        np.hstack([-D, Z, Z, -I]),
        np.hstack([Sgap_m, -Sgap_m, Z, Z]),
        np.hstack([Sgap_c, -Sgap_c, -I, Z]),
    ])
    rows = {}
    names = ("velocity", "box", "rate_up", "rate_down", "safety", "comfort")
    sizes = (N, 4 * N, N, N, N, N)
    start = 0
    for name, size in zip(names, sizes):
        rows[name] = slice(start, start + size)
        start += size
    P = np.diag(np.concatenate([np.zeros(N), np.full(N, 2 * KN * cfg.eps1),
                                np.full(N, 2 * cfg.eps2 / KN), np.full(N, 2 * KN * cfg.eps3)]))
    return {"a": a, "beta": beta, "pw": pw, "G": G, "Md": Md, "A": A, "P": P, "rows": rows}


def min_speed_rollout(cfg: MpcConfig, prob: MpcProblem, N: int) -> np.ndarray:
    """Slowest reachable host speeds v[1..N] (full braking, floored at 0)."""
    p = prob.params
    a, beta = _dynamics(cfg, p)
    theta, _ = prob.road.arrays(N)
    c = -cfg.dT / p.m_eq * _const_force(p, theta)
    v = np.empty(N)
    vk = prob.state.v_h
    for k in range(N):
        vk = max(cfg.v_min, a * vk - beta * p.F_b_max / KN + c[k])
        v[k] = vk
    return v


def build_qp(cfg: MpcConfig, prob: MpcProblem, v_ref=None, structure=None) -> QP:
    N = cfg.N
    vt = prob.target_speeds(N)
    theta, v_max = prob.road.arrays(N)
    p = prob.params
    st = structure or _structure(cfg, p, N)
    G, Md, a, pw = st["G"], st["Md"], st["a"], st["pw"]
    v0, d0 = prob.state.v_h, prob.state.d_rel
    c = -cfg.dT / p.m_eq * _const_force(p, theta)
    v_free = a ** np.arange(1, N + 1) * v0 + pw @ c
    d_free = d0 + cfg.dT * np.cumsum(0.5 * (vt[:-1] + vt[1:])) - 0.5 * cfg.dT * v0

    if v_ref is None:
        v_ref = vt[:N]
    v_ref = np.asarray(v_ref, dtype=float)[:N]
    q = np.concatenate([np.maximum(v_ref, 0.0) / p.eta_drive, np.zeros(3 * N)])

    v_slow = min_speed_rollout(cfg, prob, N)
    relaxed = bool(np.any(v_slow > v_max))
    if relaxed:
        log.debug("speed limit rows unreachable by full braking; relaxed to the braking envelope")
        v_max = np.maximum(v_max, v_slow + 1e-6)

    inf = np.inf
    gap_m = d_free + Md @ v_free - cfg.h_m * v_free
    gap_c = d_free + Md @ v_free - cfg.h_c * v_free
    e0 = np.zeros(N)
    e0[0] = prob.state.F_t_prev / KN
    dF = p.dF_t_max / KN
    l = np.concatenate([
        np.full(N, cfg.v_min) - v_free,
        np.zeros(4 * N),
        np.full(N, -inf), np.full(N, -inf),
        np.full(N, cfg.d_min + cfg.safety_margin) - gap_m,
        np.full(N, -inf),
    ])
    u = np.concatenate([
        v_max - v_free,
        np.full(N, p.F_t_max / KN), np.full(N, p.F_b_max / KN), np.full(2 * N, inf),
        dF + e0, dF - e0,
        np.full(N, inf),
        np.full(N, cfg.d_min) - gap_c,
    ])
    return QP(P=st["P"], q=q, A=st["A"], l=l, u=u, N=N, G=G, v_free=v_free, Md=Md,
              d_free=d_free, rows=st["rows"], relaxed_vmax=relaxed,
              feasible=hard_feasible(cfg, prob, N, v_slow))


def hard_feasible(cfg: MpcConfig, prob: MpcProblem, N: int | None = None, v_slow=None) -> bool:
    """Exact feasibility test of the hard rows.

    Full braking gives the pointwise slowest speed profile, which maximises
    every ``d_k - h_m v_k`` at once, so the hard gap rows are satisfiable iff
    that rollout satisfies them.
    """
    N = N or cfg.N
    v = min_speed_rollout(cfg, prob, N) if v_slow is None else v_slow
    vt = prob.target_speeds(N)
    vh = np.concatenate([[prob.state.v_h], v])
    d = prob.state.d_rel + cfg.dT * np.cumsum(0.5 * (vt[:-1] + vt[1:]) - 0.5 * (vh[:-1] + vh[1:]))
    return bool(np.all(d - cfg.h_m * v >= cfg.d_min + cfg.safety_margin - 1e-9))


# ---------------------------------------------------------------------------
# ADMM solver

@dataclass
class AdmmWorkspace:
    """Ruiz scaling and cached ``(P + sigma I + rho A'A)^-1`` for one (P, A).

    The solver iterates on ``x = D xs``, ``A_s = E A D``, ``P_s = c D P D``.
    """

    P: np.ndarray
    A: np.ndarray
    rho: float
    sigma: float
    ruiz_iter: int = 15
    D: np.ndarray = None
    E: np.ndarray = None
    c: float | None = None
    Ps: np.ndarray = None
    As: np.ndarray = None
    Kinv: np.ndarray = None
    KinvAt: np.ndarray = None
    unit_col: np.ndarray = None

    def __post_init__(self):
        n, m = self.P.shape[0], self.A.shape[0]
        D, E = np.ones(n), np.ones(m)
        Ps, As = self.P.copy(), self.A.copy()
        for _ in range(self.ruiz_iter):
            col = np.maximum(np.abs(Ps).max(axis=0), np.abs(As).max(axis=0))
            row = np.abs(As).max(axis=1)
            d = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
            e = 1.0 / np.sqrt(np.clip(row, 1e-4, 1e4))
            Ps = d[:, None] * Ps * d[None, :]
            As = e[:, None] * As * d[None, :]
            D, E = D * d, E * e
        self.D, self.E, self.Ps, self.As = D, E, Ps, As
        self.unit_col = _unit_columns(self.A)
        self.refactor(self.rho)

    def set_cost_scale(self, q: np.ndarray) -> None:
        """Fix the cost scale from the first linear term seen (refactors)."""
        if self.c is not None:
            return
        ref = max(float(np.mean(np.abs(self.Ps).max(axis=0))), float(np.max(np.abs(self.D * q), initial=0.0)))
        self.c = 1.0 / float(np.clip(ref, 1e-4, 1e4))
        self.Ps = self.c * self.Ps
        self.refactor(self.rho)

    def refactor(self, rho: float) -> None:
        self.rho = rho
        n = self.Ps.shape[0]
        K = self.Ps + self.sigma * np.eye(n) + rho * self.As.T @ self.As
        self.Kinv = np.linalg.inv(K)
        self.KinvAt = self.Kinv @ self.As.T


def _kkt_residuals(qp: QP, x, y):
    Ax = qp.A @ x
    prim = float(np.max(np.maximum(qp.l - Ax, 0.0) + np.maximum(Ax - qp.u, 0.0), initial=0.0))
    dual = float(np.max(np.abs(qp.P @ x + qp.q + qp.A.T @ y), initial=0.0))
    return prim, dual


def _unit_columns(A: np.ndarray) -> np.ndarray:
    """Column index of every row of ``A`` that is a unit vector, else -1."""
    nnz = np.count_nonzero(A, axis=1)
    col = np.argmax(A != 0, axis=1)
    unit = (nnz == 1) & (A[np.arange(len(A)), col] == 1.0)
    return np.where(unit, col, -1)


def _active_set(qp: QP, y, z):
    lo = (z - qp.l < -y) | (np.isfinite(qp.l) & (qp.l == qp.u))
    hi = (qp.u - z < y) & ~lo
    return lo, hi


def _polish(qp: QP, lo, hi, unit_col, delta=1e-9, refine=3):
    """Solve the equality-constrained KKT system on a guessed active set.

    Active unit rows (variable bounds) pin their variable, so only the free
    variables and the active general rows enter the linear system.
    """
    n = qp.n
    act = np.flatnonzero(lo | hi)
    b_all = np.where(lo, qp.l, qp.u)
    fixed = np.full(n, np.nan)
    for r in act[unit_col[act] >= 0]:
        c = unit_col[r]
        if not np.isnan(fixed[c]) and fixed[c] != b_all[r]:
            return None
        fixed[c] = b_all[r]
    pin = ~np.isnan(fixed)
    free = np.flatnonzero(~pin)
    gen = act[unit_col[act] < 0]
    x = np.where(pin, fixed, 0.0)
    Ag = qp.A[np.ix_(gen, free)]
    Pff = qp.P[np.ix_(free, free)]
    rhs = np.concatenate([-qp.q[free] - qp.P[np.ix_(free, np.flatnonzero(pin))] @ x[pin],
                          b_all[gen] - qp.A[np.ix_(gen, np.flatnonzero(pin))] @ x[pin]])
    nf, mg = len(free), len(gen)
    Kexact = np.block([[Pff, Ag.T], [Ag, np.zeros((mg, mg))]])
    K = Kexact + np.diag(np.concatenate([np.full(nf, delta), np.full(mg, -delta)]))
    try:
        Kinv = np.linalg.inv(K)
    except np.linalg.LinAlgError:
        return None
    sol = Kinv @ rhs
    for _ in range(refine):
        sol = sol + Kinv @ (rhs - Kexact @ sol)
    if not np.all(np.isfinite(sol)):
        return None
    x[free] = sol[:nf]
    y = np.zeros(len(qp.l))
    y[gen] = sol[nf:]
    # bound multipliers close the stationarity gap on pinned variables
    grad = qp.P @ x + qp.q + qp.A.T @ y
    for r in act[unit_col[act] >= 0]:
        c = unit_col[r]
        y[r] = -grad[c]
        grad[c] = 0.0
    # multiplier signs must match the side that is active
    if np.any(y[lo] > 1e-7) or np.any(y[hi] < -1e-7):
        return None
    return x, y


def solve_qp(qp: QP, cfg: MpcConfig | None = None, warm: tuple | None = None,
             workspace: AdmmWorkspace | None = None) -> MpcSolution:
    """ADMM with adaptive step size, warm start and solution polishing.

    ``warm`` is an optional ``(x, y)`` starting point.  Residuals reported
    are the KKT residuals of the returned point in QP units (kN, m, m/s).
    """
    cfg = cfg or MpcConfig(N=max(qp.N, 1))
    t0 = time.perf_counter()
    n, m = qp.n, len(qp.l)
    if not qp.feasible:
        return _infeasible_solution(qp.N, np.nan, time.perf_counter() - t0)
    if workspace is None or workspace.A is not qp.A or workspace.P is not qp.P:
        workspace = AdmmWorkspace(qp.P, qp.A, cfg.rho, cfg.sigma)
    ws = workspace
    ws.set_cost_scale(qp.q)
    D, E, c = ws.D, ws.E, ws.c
    qs, ls, us = c * D * qp.q, E * qp.l, E * qp.u
    if warm is not None:
        xs, ys = warm[0] / D, c * warm[1] / E
    else:
        xs, ys = np.zeros(n), np.zeros(m)
    zs = np.clip(ws.As @ xs, ls, us)
    tried = None
    alpha, sigma = cfg.alpha, cfg.sigma
    status, polished = "max_iter", False
    best = None
    it = 0
    check_every = 10
    Kq = ws.Kinv @ qs
    for it in range(1, cfg.max_iter + 1):
        rho = ws.rho
        xt = sigma * (ws.Kinv @ xs) - Kq + ws.KinvAt @ (rho * zs - ys)
        zt = ws.As @ xt
        xs = alpha * xt + (1.0 - alpha) * xs
        zr = alpha * zt + (1.0 - alpha) * zs
        z_new = np.minimum(np.maximum(zr + ys / rho, ls), us)
        ys = ys + rho * (zr - z_new)
        zs = z_new
        if it % check_every:
            continue
        # residuals in problem units
        x, y, z = D * xs, E * ys / c, zs / E
        Ax = qp.A @ x
        r_p = np.max(np.abs(Ax - z))
        Px, Aty = qp.P @ x, qp.A.T @ y
        r_d = np.max(np.abs(Px + qp.q + Aty))
        if cfg.polish and r_p < cfg.polish_from and r_d < cfg.polish_from:
            lo, hi = _active_set(qp, y, z)
            key = np.packbits(np.concatenate([lo, hi])).tobytes()
            pol = None if key == tried else _polish(qp, lo, hi, ws.unit_col)
            tried = key
            if pol is not None:
                p_res = _kkt_residuals(qp, *pol)
                if p_res[0] <= cfg.tol_prim and p_res[1] <= cfg.tol_dual:
                    best = (pol[0], pol[1], p_res)
                    status, polished = "optimal", True
                    break
        if r_p <= cfg.tol_prim and r_d <= cfg.tol_dual:
            status = "optimal"
            break
        # rebalance rho when the scaled primal and dual residuals drift apart
        if it % 50 == 0:
            Axs = ws.As @ xs
            sp = np.max(np.abs(Axs - zs)) / max(np.max(np.abs(Axs)), np.max(np.abs(zs)), 1e-12)
            grad = ws.Ps @ xs + qs + ws.As.T @ ys
            sd = np.max(np.abs(grad)) / max(np.max(np.abs(ws.Ps @ xs)), np.max(np.abs(ws.As.T @ ys)),
                                            np.max(np.abs(qs)), 1e-12)
            new_rho = float(np.clip(rho * np.sqrt(sp / max(sd, 1e-30)), 1e-6, 1e6))
            if new_rho > 5 * rho or new_rho < rho / 5:
                ws.refactor(new_rho)
                Kq = ws.Kinv @ qs
    x, y = D * xs, E * ys / c
    if best is None:
        best = (x, y, _kkt_residuals(qp, x, y))
        if status == "optimal" and (best[2][0] > cfg.tol_prim or best[2][1] > cfg.tol_dual):
            status = "max_iter"
    x, y, (r_p, r_d) = best
    N = qp.N
    v, d = qp.states(x)
    return MpcSolution(
        F_t=KN * x[:N], F_b=KN * x[N:2 * N], zeta1=x[2 * N:3 * N], zeta2=KN * x[3 * N:],
        v_h=v, d_rel=d, objective=qp.objective(x), status=status, prim_res=r_p, dual_res=r_d,
        iterations=it, solve_time=time.perf_counter() - t0, polished=polished, x=x, y=y)


def _infeasible_solution(N: int, F_b_max: float, elapsed: float) -> MpcSolution:
    nan = np.full(N, np.nan)
    return MpcSolution(F_t=np.zeros(N), F_b=np.full(N, F_b_max), zeta1=np.zeros(N), zeta2=np.zeros(N),
                       v_h=nan, d_rel=nan.copy(), objective=np.nan, status="infeasible",
                       prim_res=np.inf, dual_res=np.inf, iterations=0, solve_time=elapsed)


# ---------------------------------------------------------------------------
# receding horizon

def _shift(vec: np.ndarray, blocks: int, N: int) -> np.ndarray:
    out = vec.copy()
    for b in range(blocks):
        seg = vec[b * N:(b + 1) * N]
        out[b * N:(b + 1) * N - 1] = seg[1:]
        out[(b + 1) * N - 1] = seg[-1]
    return out


class EaccController:
    """Stateful receding-horizon controller (owns warm start and factorisations)."""

    def __init__(self, cfg: MpcConfig, params: VehicleParams):
        self.cfg = cfg
        self.params = params
        self._structure = _structure(cfg, params, cfg.N)
        self._workspace = AdmmWorkspace(self._structure["P"], self._structure["A"], cfg.rho, cfg.sigma)
        self._warm = None
        self.fallbacks = 0

    def reset(self) -> None:
        self._warm = None

    def _warm_start(self):
        if self._warm is None:
            return None
        x, y = self._warm
        N = self.cfg.N
        xs = _shift(x, 4, N)
        ys = y.copy()
        r = self._structure["rows"]
        for name in ("velocity", "rate_up", "rate_down", "safety", "comfort"):
            sl = r[name]
            ys[sl] = _shift(y[sl], 1, N)
        ys[r["box"]] = _shift(y[r["box"]], 4, N)
        return xs, ys

    def step(self, state: HostState, forecast, road: RoadProfile, v_t_now: float | None = None):
        """Solve one instance and return ``(F_t, F_b, solution)`` [N].

        When the hard gap rows cannot be met even under full braking, the
        fallback (zero traction, full braking) is returned with status
        ``infeasible``.
        """
        cfg, p = self.cfg, self.params
        t0 = time.perf_counter()
        prob = MpcProblem(state, forecast, road, p, v_t_now)
        qp = build_qp(cfg, prob, structure=self._structure)
        if not qp.feasible:
            self.fallbacks += 1
            self._warm = None
            log.info("hard safety rows infeasible; applying full braking")
            sol = _infeasible_solution(cfg.N, p.F_b_max, time.perf_counter() - t0)
            return 0.0, p.F_b_max, sol
        sol = solve_qp(qp, cfg, self._warm_start(), self._workspace)
        if cfg.relinearize and sol.status == "optimal":
            v_ref = np.concatenate([[state.v_h], sol.v_h[:-1]])
            qp = build_qp(cfg, prob, v_ref=v_ref, structure=self._structure)
            sol = solve_qp(qp, cfg, (sol.x, sol.y), self._workspace)
        sol.solve_time = time.perf_counter() - t0
        self._warm = (sol.x, sol.y)
        F_t = float(np.clip(sol.F_t[0], 0.0, p.F_t_max))
        F_b = float(np.clip(sol.F_b[0], 0.0, p.F_b_max))
        if sol.status != "optimal":
            log.info("QP stopped with status %s (prim %.2e, dual %.2e)", sol.status, sol.prim_res, sol.dual_res)
        return F_t, F_b, sol


def control_step(cfg: MpcConfig, params: VehicleParams, state: HostState, forecast,
                 road: RoadProfile, v_t_now: float | None = None,
                 controller: EaccController | None = None):
    """One receding-horizon step; pass ``controller`` to keep warm starts."""
    controller = controller or EaccController(cfg, params)
    return controller.step(state, forecast, road, v_t_now)
