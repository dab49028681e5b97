"""Longitudinal dynamics and power surrogate for the host battery-electric vehicle.

All functions are pure.  The aerodynamic drag is kept in two forms: the exact
quadratic ``0.5*rho*A_f*c_a*v**2`` and a straight-line fit ``p1*v + p2`` of
``v**2`` that keeps the discrete dynamics affine (and the MPC a QP).
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

AERO_FIT_RANGE = (0.0, 38.0)
AERO_FIT_POINTS = 201
# Fit quality accepted for (p1, p2); the least-squares line of v**2 on
# [0, v_hi] peaks at ~1/6 of v_hi**2 error, so this leaves a little slack.
AERO_FIT_TOL = 0.2


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants of the host BEV.

    ``p1``/``p2`` default to the least-squares fit over ``AERO_FIT_RANGE``.
    The defaults are plausible mid-size BEV values, not measured data.
    """

    m_v: float = 1500.0
    m_eq: float = 1600.0
    A_f: float = 2.3
    c_a: float = 0.3
    c_r: float = 0.01
    rho: float = 1.2
    g: float = 9.81
    p1: float | None = None
    p2: float | None = None
    F_t_max: float = 4000.0
    F_b_max: float = 6000.0
    dF_t_max: float = 400.0
    eta_drive: float = 0.9
    P_aux: float = 300.0

    def __post_init__(self):
        if not self.m_eq >= self.m_v > 0:
            raise ValueError(f"need m_eq >= m_v > 0, got m_eq={self.m_eq}, m_v={self.m_v}")
        for name in ("A_f", "c_a", "c_r", "rho", "g", "F_t_max", "F_b_max", "dF_t_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.eta_drive <= 1:
            raise ValueError(f"eta_drive must lie in (0, 1], got {self.eta_drive}")
        if self.P_aux < 0:
            raise ValueError(f"P_aux must be >= 0, got {self.P_aux}")
        if (self.p1 is None) != (self.p2 is None):
            raise ValueError("p1 and p2 must be given together")
        if self.p1 is None:
            p1, p2, _ = fit_aero_line(self, *AERO_FIT_RANGE)
            object.__setattr__(self, "p1", p1)
            object.__setattr__(self, "p2", p2)
        else:
            err = aero_line_error(self.p1, self.p2, *AERO_FIT_RANGE)
            if err > AERO_FIT_TOL:
                raise ValueError(
                    f"aero line (p1={self.p1}, p2={self.p2}) misfits v**2 on "
                    f"{AERO_FIT_RANGE}: max relative error {err:.3f} > {AERO_FIT_TOL}"
                )

    @property
    def aero_coef(self) -> float:
        """0.5 * rho * A_f * c_a [kg/m]."""
        return 0.5 * self.rho * self.A_f * self.c_a

    def replace(self, **changes) -> "VehicleParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class HostState:
    v_h: float
    d_rel: float
    F_t_prev: float = 0.0
    clamped: bool = False  # velocity was floored at 0 during the step that produced this state

    def __post_init__(self):
        if self.v_h < 0:
            raise ValueError(f"v_h must be >= 0, got {self.v_h}")
        if not np.isfinite(self.d_rel):
            raise ValueError("d_rel must be finite")


@dataclass(frozen=True)
class RoadPoint:
    theta: float = 0.0
    v_limit: float = 13.9

    def __post_init__(self):
        if not abs(self.theta) < np.pi / 2:
            raise ValueError(f"|theta| must be < pi/2, got {self.theta}")
        if not self.v_limit > 0:
            raise ValueError(f"v_limit must be positive, got {self.v_limit}")


def _aero_grid(v_lo: float, v_hi: float, n: int) -> np.ndarray:
    if not 0 <= v_lo < v_hi:
        raise ValueError(f"need 0 <= v_lo < v_hi, got [{v_lo}, {v_hi}]")
    return np.linspace(v_lo, v_hi, n)


def aero_line_error(p1: float, p2: float, v_lo: float, v_hi: float, n: int = AERO_FIT_POINTS) -> float:
    """Max |(p1*v + p2) - v**2| on the grid, relative to the largest v**2 there.

    Normalising by the peak (not pointwise) keeps the measure finite at v = 0.
    The constant factor 0.5*rho*A_f*c_a cancels, so this is also the relative
    error of the induced aero force.
    """
    v = _aero_grid(v_lo, v_hi, n)
    sq = v**2
    return float(np.max(np.abs(p1 * v + p2 - sq)) / np.max(sq))


def fit_aero_line(params: VehicleParams | None, v_lo: float, v_hi: float,
                  n: int = AERO_FIT_POINTS) -> tuple[float, float, float]:
    """Least-squares line ``p1*v + p2`` through ``v**2`` on a uniform grid.

    Returns ``(p1, p2, max_rel_err)``.  ``params`` is unused by the fit itself
    (the line approximates ``v**2`` only) and is accepted for API symmetry.
    """
    v = _aero_grid(v_lo, v_hi, n)
    p1, p2 = np.polyfit(v, v**2, 1)
    return float(p1), float(p2), aero_line_error(p1, p2, v_lo, v_hi, n)


def resistance_force(params: VehicleParams, v: float, theta: float = 0.0,
                     linearized: bool = False) -> float:
    """Aero + rolling + grade resistance [N]."""
    if v < 0:
        raise ValueError(f"velocity must be >= 0, got {v}")
    if linearized:
        f_aero = params.aero_coef * (params.p1 * v + params.p2)
    else:
        f_aero = params.aero_coef * v * v
    f_roll = params.c_r * params.m_v * params.g * np.cos(theta)
    f_grade = params.m_v * params.g * np.sin(theta)
    return float(f_aero + f_roll + f_grade)


def step_dynamics(params: VehicleParams, state: HostState, F_t: float, F_b: float,
                  road: RoadPoint, v_t_now: float, v_t_next: float, dt: float) -> HostState:
    """Advance the host by one sample with the affine model used inside the MPC.

    Velocity follows an explicit Euler step of the linearised force balance
    and is floored at zero; the gap uses the trapezoidal rule on both speeds.
    """
    if F_t < 0 or F_b < 0:
        raise ValueError(f"forces must be >= 0, got F_t={F_t}, F_b={F_b}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    v = state.v_h
    f_res = resistance_force(params, v, road.theta, linearized=True)
    v_next = v + dt / params.m_eq * (F_t - F_b - f_res)
    clamped = v_next < 0
    if clamped:
        log.debug("host velocity clamped at 0 (unclamped %.4g m/s)", v_next)
        v_next = 0.0
    d_next = state.d_rel + dt * (0.5 * (v_t_now + v_t_next) - 0.5 * (v + v_next))
    return HostState(v_h=float(v_next), d_rel=float(d_next), F_t_prev=float(F_t), clamped=bool(clamped))


def power_draw(params: VehicleParams, v: float, F_t: float) -> float:
    """Battery power [W]: traction power through the drivetrain plus auxiliaries.

    Surrogate for the unavailable BEV consumption map.  Braking recovers
    nothing.
    """
    if v < 0 or F_t < 0:
        raise ValueError(f"need v >= 0 and F_t >= 0, got v={v}, F_t={F_t}")
    return F_t * v / params.eta_drive + params.P_aux
