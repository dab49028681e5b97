"""Multi-step target-speed forecasts: physics baselines and ground-truth pass-through."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

PRODUCERS = ("CV", "CA", "LSTM", "GRU", "ORACLE", "CS")


@dataclass(frozen=True)
class SpeedForecast:
    v_hat: np.ndarray
    producer: str
    clamped: bool = False

    def __post_init__(self):
        v = np.asarray(self.v_hat, dtype=float)
        object.__setattr__(self, "v_hat", v)
        if v.ndim != 1 or len(v) == 0:
            raise ValueError("forecast must be a non-empty 1-D sequence")
        if np.any(v < 0):
            raise ValueError("forecast speeds must be non-negative")
        if self.producer not in PRODUCERS:
            raise ValueError(f"unknown producer {self.producer!r}")

    @property
    def H(self) -> int:
        return len(self.v_hat)


def cv_trajectory(v_now, v_prev, H: int) -> np.ndarray:
    """Mean of the last two speeds, held for H steps (broadcasts over leading dims)."""
    mean = 0.5 * (np.asarray(v_now, dtype=float) + np.asarray(v_prev, dtype=float))
    return np.repeat(mean[..., None], H, axis=-1)


def ca_trajectory(v_now, v_prev, dt: float, H: int) -> np.ndarray:
    """Unclamped constant-acceleration extrapolation ``v_now + j*dt*a``, j = 1..H."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    v_now = np.asarray(v_now, dtype=float)
    a = (v_now - np.asarray(v_prev, dtype=float)) / dt
    j = np.arange(1, H + 1)
    return v_now[..., None] + j * dt * a[..., None]


def predict_cv(v_now: float, v_prev: float, H: int) -> SpeedForecast:
    if v_now < 0 or v_prev < 0:
        raise ValueError("speeds must be non-negative")
    return SpeedForecast(cv_trajectory(v_now, v_prev, H), "CV")


def predict_cs(v_now: float, v_prev: float, H: int) -> SpeedForecast:
    """Constant-speed assumption of the criterion-I controller (same rule as CV)."""
    return SpeedForecast(predict_cv(v_now, v_prev, H).v_hat, "CS")


def predict_ca(v_now: float, v_prev: float, dt: float, H: int) -> SpeedForecast:
    raw = ca_trajectory(v_now, v_prev, dt, H)
    clamped = bool(np.any(raw < 0))
    if clamped:
        logger.debug("CA forecast clamped at 0 from step %d", int(np.argmax(raw < 0)) + 1)
    return SpeedForecast(np.maximum(raw, 0.0), "CA", clamped)


def predict_oracle(log, t: int, H: int, target: int) -> SpeedForecast:
    """Logged speeds of ``target`` at steps t+1 .. t+H (perfect foresight)."""
    if not 0 <= target < log.n_vehicles:
        raise IndexError(f"target {target} out of range")
    velocities = log.velocities[:, target]
    if t < 0 or t + H >= len(velocities):
        raise IndexError(f"forecast window [{t + 1}, {t + H}] exceeds log of {len(velocities)} steps")
    return SpeedForecast(velocities[t + 1:t + H + 1].copy(), "ORACLE")
