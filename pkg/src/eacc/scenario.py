"""Synthetic single-lane corridor traffic and the V2V/V2I feature windows built from it.

The corridor is a closed loop so long runs need no spawning: vehicles carry an
odometer position and road attributes are looked up at ``position % length``.
Vehicle 0 leads the platoon; vehicle ``i`` follows ``i - 1`` and never
interacts with the wrap-around tail.

Feature columns (Table-1 order)::

    FG1: v_t, v_p1, d_rel1, s_TL, d_TL, v_max
    FG2: FG1 + v_p2, d_rel2, s_TL[k+1] ... s_TL[k+H]
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LIGHT_CODE = {"green": 1.0, "yellow": 0.5, "red": 0.0}
D_SENSE = 200.0
HORIZON_PRESETS = (25, 50)
MIN_STEPS = 2 * max(HORIZON_PRESETS) + 1

FG1_COLUMNS = ("v_t", "v_p1", "d_rel1", "s_TL", "d_TL", "v_max")

# car-following law
S0 = 2.0            # standstill spacing to leader / stop line [m]
GAP_MIN = 0.5       # hard bumper-to-bumper floor enforced after integration [m]
B_MAX = 3.5         # braking cap of generated traffic [m/s^2]
B_STOP_YELLOW = 2.5  # max decel a driver accepts to stop at yellow [m/s^2]
LIMIT_LOOKAHEAD = 300.0
# driver imperfection: each step a driver sheds up to this fraction of its
# max acceleration at random (Krauss-style dawdling)
IMPERFECTION = 0.5
# declared bound on v - v_limit for generated traffic [m/s]
SPEED_OVERSHOOT = 1.0


def feature_columns(group: str, H: int) -> tuple[str, ...]:
    if group == "FG1":
        return FG1_COLUMNS
    if group == "FG2":
        return FG1_COLUMNS + ("v_p2", "d_rel2") + tuple(f"s_TL+{j}" for j in range(1, H + 1))
    raise ValueError(f"unknown feature group {group!r}")


@dataclass(frozen=True)
class TrafficLight:
    position: float
    cycle: tuple[tuple[str, float], ...]
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "cycle", tuple((str(s), float(d)) for s, d in self.cycle))
        states = {s for s, _ in self.cycle}
        if not states <= set(LIGHT_CODE):
            raise ValueError(f"unknown light states {states - set(LIGHT_CODE)}")
        if not {"green", "red"} <= states:
            raise ValueError("cycle needs at least a green and a red phase")
        if any(d <= 0 for _, d in self.cycle):
            raise ValueError("phase durations must be positive")

    @property
    def period(self) -> float:
        return sum(d for _, d in self.cycle)

    def code_at(self, t) -> np.ndarray:
        """Encoded state (green 1, yellow 0.5, red 0) at time(s) ``t``."""
        tau = np.mod(np.asarray(t, dtype=float) + self.offset, self.period)
        ends = np.cumsum([d for _, d in self.cycle])
        idx = np.minimum(np.searchsorted(ends, tau, side="right"), len(ends) - 1)
        codes = np.array([LIGHT_CODE[s] for s, _ in self.cycle])
        return codes[idx]


@dataclass(frozen=True)
class Corridor:
    length: float
    segments: tuple[tuple[float, float], ...]           # (start, v_limit)
    lights: tuple[TrafficLight, ...] = ()
    grade_profile: tuple[tuple[float, float], ...] = ((0.0, 0.0),)  # (start, theta)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple((float(a), float(b)) for a, b in self.segments))
        object.__setattr__(self, "grade_profile", tuple((float(a), float(b)) for a, b in self.grade_profile))
        object.__setattr__(self, "lights", tuple(self.lights))
        starts = [s for s, _ in self.segments]
        if not starts or starts[0] != 0.0 or any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segments must start at 0 and be strictly increasing")
        if starts[-1] >= self.length:
            raise ValueError("segment starts must lie inside [0, length)")
        if any(v <= 0 for _, v in self.segments):
            raise ValueError("speed limits must be positive")
        pos = [lt.position for lt in self.lights]
        if any(b <= a for a, b in zip(pos, pos[1:])) or any(not 0 <= p <= self.length for p in pos):
            raise ValueError("light positions must be strictly increasing within [0, length]")
        if self.grade_profile[0][0] != 0.0:
            raise ValueError("grade profile must start at 0")

    def _lookup(self, table, s):
        starts = np.array([a for a, _ in table])
        values = np.array([b for _, b in table])
        idx = np.searchsorted(starts, np.mod(s, self.length), side="right") - 1
        return values[idx]

    def limit_at(self, s):
        return self._lookup(self.segments, s)

    def grade_at(self, s):
        return self._lookup(self.grade_profile, s)

    def limit_envelope(self, s, decel: float, lookahead: float = LIMIT_LOOKAHEAD):
        """Speed an anticipating driver allows at ``s``: the current limit, and
        every lower limit ahead reachable by braking at ``decel``."""
        s = np.asarray(s, dtype=float)
        env = self.limit_at(s).astype(float)
        local = np.mod(s, self.length)
        for start, v_lim in self.segments:
            dist = np.mod(start - local, self.length)
            ahead = (dist > 0) & (dist <= lookahead)
            env = np.where(ahead, np.minimum(env, np.sqrt(v_lim**2 + 2.0 * decel * dist)), env)
        return env

    def light_distances(self, s) -> np.ndarray:
        """Distance ahead from each ``s`` to each light, shape ``s.shape + (n_lights,)``."""
        s = np.asarray(s, dtype=float)
        if not self.lights:
            return np.full(s.shape + (0,), np.inf)
        pos = np.array([lt.position for lt in self.lights])
        return np.mod(pos - np.mod(s, self.length)[..., None], self.length)

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "segments": [list(x) for x in self.segments],
            "lights": [{"position": lt.position, "cycle": [list(c) for c in lt.cycle], "offset": lt.offset}
                       for lt in self.lights],
            "grade_profile": [list(x) for x in self.grade_profile],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Corridor":
        return cls(length=d["length"], segments=tuple(map(tuple, d["segments"])),
                   lights=tuple(TrafficLight(lt["position"], tuple(map(tuple, lt["cycle"])), lt["offset"])
                                for lt in d["lights"]),
                   grade_profile=tuple(map(tuple, d["grade_profile"])))


@dataclass
class ScenarioLog:
    """Ground truth of one run; arrays are indexed ``[step, vehicle]``."""

    dt: float
    positions: np.ndarray
    velocities: np.ndarray
    lengths: np.ndarray
    light_states: np.ndarray     # [step, light] encoded
    corridor: Corridor
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.positions.shape[0]

    @property
    def n_vehicles(self) -> int:
        return self.positions.shape[1]

    def gaps(self) -> np.ndarray:
        """Bumper-to-bumper gap of each follower to its predecessor, ``[step, vehicle-1]``."""
        return self.positions[:, :-1] - self.lengths[:-1] - self.positions[:, 1:]

    def check_invariants(self) -> None:
        if np.any(self.velocities < 0):
            raise AssertionError("negative velocity in log")
        if np.any(np.diff(self.positions, axis=0) < 0):
            raise AssertionError("position decreased")
        if np.any(self.gaps() < 0):
            raise AssertionError("overlapping vehicles (overtaking)")

    # -- persistence -----------------------------------------------------
    def csv_header(self) -> list[str]:
        cols = ["t"]
        for i in range(self.n_vehicles):
            cols += [f"x_{i}", f"v_{i}"]
        cols += [f"light_{j}" for j in range(self.light_states.shape[1])]
        return cols

    def save(self, path) -> tuple[Path, Path]:
        """Write ``<path>.csv`` (one row per step) and a ``<path>.json`` sidecar."""
        path = Path(path).with_suffix("")
        T, n = self.positions.shape
        data = np.empty((T, 1 + 2 * n + self.light_states.shape[1]))
        data[:, 0] = np.arange(T) * self.dt
        data[:, 1:1 + 2 * n:2] = self.positions
        data[:, 2:2 + 2 * n:2] = self.velocities
        data[:, 1 + 2 * n:] = self.light_states
        csv_path, json_path = path.with_suffix(".csv"), path.with_suffix(".json")
        np.savetxt(csv_path, data, delimiter=",", header=",".join(self.csv_header()),
                   comments="", fmt="%.17g")
        sidecar = {"kind": "scenario", "dt": self.dt, "lengths": self.lengths.tolist(),
                   "corridor": self.corridor.to_dict(), "meta": self.meta}
        json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        return csv_path, json_path

    @classmethod
    def load(cls, path) -> "ScenarioLog":
        path = Path(path).with_suffix("")
        sidecar = json.loads(path.with_suffix(".json").read_text())
        if sidecar.get("kind") != "scenario":
            raise ValueError(f"{path}.json is not a scenario sidecar")
        data = np.loadtxt(path.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
        n = len(sidecar["lengths"])
        return cls(dt=sidecar["dt"], positions=data[:, 1:1 + 2 * n:2].copy(),
                   velocities=data[:, 2:2 + 2 * n:2].copy(), lengths=np.array(sidecar["lengths"]),
                   light_states=data[:, 1 + 2 * n:].copy(),
                   corridor=Corridor.from_dict(sidecar["corridor"]), meta=sidecar["meta"])


# ---------------------------------------------------------------------------
# generation

def random_corridor(rng: np.random.Generator, profile: str) -> Corridor:
    """Draw a loop corridor for ``profile`` in {urban, highway, mixed}."""
    if profile == "urban":
        length = rng.uniform(2000.0, 3000.0)
        n_seg = int(rng.integers(3, 6))
        starts = np.sort(rng.uniform(0.0, length, n_seg - 1))
        limits = rng.choice([8.3, 11.1, 13.9], n_seg)
        segments = [(0.0, float(limits[0]))] + [(float(s), float(v)) for s, v in zip(starts, limits[1:])]
        lights = _random_lights(rng, length, int(rng.integers(2, 5)), lo=0.0, hi=length)
        grades = [(0.0, float(rng.uniform(-0.01, 0.01))), (length / 2, float(rng.uniform(-0.01, 0.01)))]
    elif profile == "highway":
        length = rng.uniform(8000.0, 12000.0)
        n_seg = int(rng.integers(2, 5))
        starts = np.sort(rng.uniform(0.0, length, n_seg - 1))
        limits = rng.choice([22.2, 27.8, 33.3, 36.1], n_seg)
        segments = [(0.0, float(limits[0]))] + [(float(s), float(v)) for s, v in zip(starts, limits[1:])]
        lights = []
        gs = np.linspace(0.0, length, 5)[:-1]
        grades = [(float(s), float(rng.uniform(-0.03, 0.03))) for s in gs]
    elif profile == "mixed":
        urban_len = rng.uniform(1500.0, 2500.0)
        length = urban_len + rng.uniform(3000.0, 5000.0)
        segments = [(0.0, float(rng.choice([8.3, 11.1, 13.9]))),
                    (float(urban_len / 2), float(rng.choice([8.3, 11.1, 13.9]))),
                    (float(urban_len), float(rng.choice([22.2, 27.8]))),
                    (float(urban_len + (length - urban_len) / 2), float(rng.choice([27.8, 33.3, 36.1])))]
        lights = _random_lights(rng, length, 2, lo=0.0, hi=urban_len)
        grades = [(0.0, float(rng.uniform(-0.01, 0.01))), (float(urban_len), float(rng.uniform(-0.03, 0.03)))]
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return Corridor(length=float(length), segments=tuple(segments), lights=tuple(lights),
                    grade_profile=tuple(grades))


def _random_lights(rng, length, n, lo, hi, min_spacing=300.0):
    pos = []
    for _ in range(1000):
        if len(pos) == n:
            break
        p = rng.uniform(lo + 100.0, hi - 100.0)
        if all(min(abs(p - q), length - abs(p - q)) >= min_spacing for q in pos):
            pos.append(p)
    lights = []
    for p in sorted(pos):
        cycle = (("green", float(rng.uniform(20.0, 40.0))), ("yellow", 3.0), ("red", float(rng.uniform(20.0, 40.0))))
        period = sum(d for _, d in cycle)
        lights.append(TrafficLight(float(p), cycle, float(rng.uniform(0.0, period))))
    return lights


def _idm(v, v0, gap, dv, T, a, b):
    s_star = S0 + np.maximum(0.0, v * T + v * dv / (2.0 * np.sqrt(a * b)))
    return a * (1.0 - (v / np.maximum(v0, 0.1)) ** 4 - (s_star / np.maximum(gap, 0.01)) ** 2)


def generate_scenario(seed: int, profile: str = "urban", n_vehicles: int = 10,
                      duration: float = 600.0, dt: float = 0.2,
                      corridor: Corridor | None = None) -> ScenarioLog:
    """Simulate a platoon on a (random or given) corridor.

    Drivers follow an IDM-type law.  A red light, or a yellow one that can
    be stopped for comfortably, acts as a standing leader at the stop line.
    Every driver's desired speed is a slowly varying fraction of the
    anticipated limit.
    """
    if n_vehicles < 3:
        raise ValueError("n_vehicles must be >= 3 (a target needs two predecessors)")
    if dt <= 0:
        raise ValueError("dt must be positive")
    T = int(round(duration / dt))
    if T < MIN_STEPS:
        raise ValueError(f"duration {duration}s gives {T} steps; need >= {MIN_STEPS} to populate windows")
    rng = np.random.default_rng(seed)
    if corridor is None:
        corridor = random_corridor(rng, profile)

    n = n_vehicles
    lengths = rng.uniform(4.0, 5.0, n)
    desire = rng.uniform(0.85, 1.0, n)
    headway = rng.uniform(1.0, 1.8, n)
    a_max = rng.uniform(1.0, 2.0, n)
    b_comf = rng.uniform(1.5, 2.5, n)
    ou_sigma = np.where(np.arange(n) == 0, 0.08, 0.03)
    factor = np.ones(n)

    x = np.empty(n)
    v = np.empty(n)
    front = rng.uniform(0.0, corridor.length)
    lim0 = float(corridor.limit_at(front))
    for i in range(n):
        v[i] = 0.5 * desire[i] * lim0
        if i == 0:
            x[i] = front
        else:
            x[i] = x[i - 1] - lengths[i - 1] - (S0 + headway[i] * v[i])

    pos = np.empty((T, n))
    vel = np.empty((T, n))
    light_pos = np.array([lt.position for lt in corridor.lights])
    lights = np.empty((T, len(corridor.lights)))
    for k in range(T):
        t = k * dt
        pos[k], vel[k] = x, v
        codes = np.array([lt.code_at(t) for lt in corridor.lights])
        lights[k] = codes

        # slowly varying desired-speed fraction (Ornstein-Uhlenbeck, clipped)
        factor += 0.05 * (1.0 - factor) * dt + ou_sigma * np.sqrt(dt) * rng.standard_normal(n)
        np.clip(factor, 0.6, 1.0, out=factor)
        v0 = factor * desire * corridor.limit_envelope(x, b_comf)

        gap = np.full(n, np.inf)
        dv = np.zeros(n)
        gap[1:] = x[:-1] - lengths[:-1] - x[1:]
        dv[1:] = v[1:] - v[:-1]
        acc = np.where(np.isfinite(gap), _idm(v, v0, gap, dv, headway, a_max, b_comf),
                       a_max * (1.0 - (v / v0) ** 4))

        if len(light_pos):
            dist = corridor.light_distances(x)
            j = np.argmin(dist, axis=1)
            d_stop = dist[np.arange(n), j]
            state = codes[j]
            need = v**2 / (2.0 * np.maximum(d_stop, 0.1))
            stop = (d_stop <= D_SENSE) & (
                ((state == LIGHT_CODE["red"]) & (need <= B_MAX))
                | ((state == LIGHT_CODE["yellow"]) & (need <= B_STOP_YELLOW)))
            acc_stop = _idm(v, v0, d_stop, v, headway, a_max, b_comf)
            acc = np.where(stop, np.minimum(acc, acc_stop), acc)

        acc = acc - IMPERFECTION * a_max * rng.random(n)
        acc = np.clip(acc, -B_MAX, a_max)
        v_new = np.maximum(0.0, v + acc * dt)
        x_new = x + 0.5 * (v + v_new) * dt
        for i in range(1, n):
            bound = x_new[i - 1] - lengths[i - 1] - GAP_MIN
            if x_new[i] > bound:
                x_new[i] = max(bound, x[i])
                v_new[i] = min(v_new[i], v_new[i - 1])
        x, v = x_new, v_new

    meta = {"seed": int(seed), "profile": profile,
            "n_vehicles": n, "duration": float(duration)}
    return ScenarioLog(dt=dt, positions=pos, velocities=vel, lengths=lengths,
                       light_states=lights, corridor=corridor, meta=meta)


# ---------------------------------------------------------------------------
# feature windows

def step_features(log: ScenarioLog, target: int, group: str, H: int) -> np.ndarray:
    """Per-step feature rows of ``target`` for steps ``0 .. T-H-1``.

    Rows stop H steps before the log end so FG2's SPaT columns only read
    logged light states.
    """
    if not 0 <= target < log.n_vehicles:
        raise IndexError(f"target_index {target} out of range for {log.n_vehicles} vehicles")
    T = log.n_steps - H
    if T <= 0:
        raise ValueError("log shorter than horizon")
    cor = log.corridor
    x = log.positions[:T, target]
    v = log.velocities[:T, target]
    v_lim = cor.limit_at(x)

    def neighbour(gap, speed):
        present = np.isfinite(gap) & (gap <= D_SENSE)
        return np.where(present, speed, v_lim), np.where(present, gap, D_SENSE)

    if target >= 1:
        d1 = log.positions[:T, target - 1] - log.lengths[target - 1] - x
        v_p1, d_rel1 = neighbour(d1, log.velocities[:T, target - 1])
    else:
        d1 = np.full(T, np.inf)
        v_p1, d_rel1 = neighbour(d1, v_lim)

    if cor.lights:
        dist = cor.light_distances(x)
        j = np.argmin(dist, axis=1)
        d_tl = dist[np.arange(T), j]
        in_range = d_tl <= D_SENSE
        s_tl = np.where(in_range, log.light_states[np.arange(T), j], 1.0)
        d_tl = np.where(in_range, d_tl, D_SENSE)
    else:
        j = np.zeros(T, dtype=int)
        in_range = np.zeros(T, dtype=bool)
        s_tl, d_tl = np.ones(T), np.full(T, D_SENSE)

    cols = [v, v_p1, d_rel1, s_tl, d_tl, v_lim]
    if group == "FG1":
        return np.column_stack(cols)
    if group != "FG2":
        raise ValueError(f"unknown feature group {group!r}")
    if target >= 2:
        d12 = log.positions[:T, target - 2] - log.lengths[target - 2] - log.positions[:T, target - 1]
        d2 = d1 + log.lengths[target - 1] + d12
        v_p2, d_rel2 = neighbour(d2, log.velocities[:T, target - 2])
    else:
        v_p2, d_rel2 = neighbour(np.full(T, np.inf), v_lim)
    spat = np.ones((T, H))
    if cor.lights:
        steps = np.arange(T)[:, None] + np.arange(1, H + 1)[None, :]
        spat = np.where(in_range[:, None], log.light_states[steps, j[:, None]], 1.0)
    return np.column_stack(cols + [v_p2, d_rel2, spat])


@dataclass
class FeatureWindow:
    group: str
    H: int
    past: np.ndarray            # (H, F)
    future_labels: np.ndarray   # (H,)
    normalized: bool = False


@dataclass(frozen=True)
class NormStats:
    """Per-feature min/max of the training split; scaled = (x - min) / (max - min)."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min", np.asarray(self.min, dtype=float))
        object.__setattr__(self, "max", np.asarray(self.max, dtype=float))
        if np.any(self.max < self.min):
            raise ValueError("NormStats needs max >= min")

    @property
    def scale(self) -> np.ndarray:
        span = self.max - self.min
        return np.where(span > 0, span, 1.0)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.min) / self.scale

    def invert(self, z: np.ndarray) -> np.ndarray:
        return z * self.scale + self.min

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["min"]), np.array(d["max"]))


@dataclass
class WindowSet:
    """Sliding windows over per-step feature rows, stored without duplication.

    Window ``(src, k0)`` has past rows ``k0 .. k0+H-1`` of ``features[src]``
    and labels ``speeds[src][k0+H .. k0+2H-1]``.  When ``norm`` is set,
    materialised windows are min-max scaled; the stored rows stay raw.
    """

    group: str
    H: int
    features: list[np.ndarray]
    speeds: list[np.ndarray]
    index: np.ndarray                # (n, 2) int: source, start
    norm: NormStats | None = None

    @property
    def normalized(self) -> bool:
        return self.norm is not None

    @property
    def n_features(self) -> int:
        return self.features[0].shape[1]

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, i: int) -> FeatureWindow:
        past, labels = self.batch(np.array([i]))
        return FeatureWindow(self.group, self.H, past[0], labels[0], self.normalized)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def raw_batch(self, idx) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(idx)
        H = self.H
        past = np.empty((len(idx), H, self.n_features))
        labels = np.empty((len(idx), H))
        for row, (src, k0) in enumerate(self.index[idx]):
            past[row] = self.features[src][k0:k0 + H]
            labels[row] = self.speeds[src][k0 + H:k0 + 2 * H]
        return past, labels

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray]:
        past, labels = self.raw_batch(idx)
        if self.norm is not None:
            past = self.norm.apply(past)
        return past, labels

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.batch(np.arange(len(self)))

    def last_two_speeds(self) -> tuple[np.ndarray, np.ndarray]:
        """Raw target speed at the last two past steps of every window (for CV/CA)."""
        src, k0 = self.index[:, 0], self.index[:, 1]
        now = np.array([self.speeds[s][k + self.H - 1] for s, k in zip(src, k0)])
        prev = np.array([self.speeds[s][k + self.H - 2] for s, k in zip(src, k0)])
        return now, prev

    def subset(self, rows) -> "WindowSet":
        return WindowSet(self.group, self.H, self.features, self.speeds, self.index[rows], self.norm)

    def with_norm(self, norm: NormStats | None) -> "WindowSet":
        return WindowSet(self.group, self.H, self.features, self.speeds, self.index, norm)

    @classmethod
    def concat(cls, sets: list["WindowSet"]) -> "WindowSet":
        if not sets:
            raise ValueError("nothing to concatenate")
        g, H = sets[0].group, sets[0].H
        feats, speeds, index = [], [], []
        for ws in sets:
            if (ws.group, ws.H) != (g, H):
                raise ValueError("cannot mix feature groups or horizons")
            idx = ws.index.copy()
            idx[:, 0] += len(feats)
            feats += ws.features
            speeds += ws.speeds
            index.append(idx)
        return cls(g, H, feats, speeds, np.concatenate(index), sets[0].norm)

    def save_csv(self, path) -> Path:
        """One row per window: source, start, past features (time-major), labels."""
        path = Path(path)
        past, labels = self.batch(np.arange(len(self)))
        cols = ["source", "start"]
        names = feature_columns(self.group, self.H)
        cols += [f"{c}@{t}" for t in range(self.H) for c in names]
        cols += [f"label_{j}" for j in range(1, self.H + 1)]
        data = np.column_stack([self.index.astype(float), past.reshape(len(self), -1), labels])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
        return path


def extract_windows(log: ScenarioLog, group: str, H: int, target_index: int) -> WindowSet:
    """All stride-1 windows (H past rows, H future speeds) for one target."""
    if not 0 <= target_index < log.n_vehicles:
        raise IndexError(f"target_index {target_index} out of range for {log.n_vehicles} vehicles")
    n_win = log.n_steps - 2 * H + 1
    if n_win < 1:
        raise ValueError(f"log of {log.n_steps} steps too short for H={H}")
    feats = step_features(log, target_index, group, H)
    speeds = log.velocities[:, target_index].copy()
    index = np.column_stack([np.zeros(n_win, dtype=int), np.arange(n_win)])
    return WindowSet(group, H, [feats], [speeds], index)


def scenario_windows(log: ScenarioLog, group: str, H: int, targets=None) -> WindowSet:
    """Windows for every vehicle with two predecessors (or the given targets)."""
    if targets is None:
        targets = range(2, log.n_vehicles)
    return WindowSet.concat([extract_windows(log, group, H, i) for i in targets])


def split_and_normalize(windows: WindowSet, ratios=(0.7, 0.15, 0.15), purge: bool = True):
    """Chronological per-source split plus min-max scaling from the train part.

    With ``purge`` the first ``2H-1`` windows of the val and test parts are
    dropped so no time step is shared across parts.  Labels stay in m/s.
    Returns ``(train, val, test, norm)``.
    """
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or np.any(ratios <= 0) or not np.isclose(ratios.sum(), 1.0):
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    gap = 2 * windows.H - 1 if purge else 0
    parts = [[], [], []]
    for src in np.unique(windows.index[:, 0]):
        rows = np.flatnonzero(windows.index[:, 0] == src)
        rows = rows[np.argsort(windows.index[rows, 1], kind="stable")]
        n = len(rows)
        c1 = int(round(ratios[0] * n))
        c2 = int(round((ratios[0] + ratios[1]) * n))
        parts[0].append(rows[:c1])
        parts[1].append(rows[c1 + gap:c2])
        parts[2].append(rows[c2 + gap:])
    parts = [np.concatenate(p) for p in parts]
    for name, p in zip(("train", "val", "test"), parts):
        if len(p) == 0:
            raise ValueError(f"empty {name} split")
    norm = fit_norm(windows.subset(parts[0]))
    return (*(windows.subset(p).with_norm(norm) for p in parts), norm)


def fit_norm(windows: WindowSet) -> NormStats:
    """Min/max over every feature row covered by ``windows``."""
    lo = np.full(windows.n_features, np.inf)
    hi = np.full(windows.n_features, -np.inf)
    H = windows.H
    for src in np.unique(windows.index[:, 0]):
        starts = windows.index[windows.index[:, 0] == src, 1]
        covered = np.zeros(len(windows.features[src]), dtype=bool)
        # every row k0 .. k0+H-1 for each start
        marks = np.zeros(len(covered) + 1, dtype=int)
        np.add.at(marks, starts, 1)
        np.add.at(marks, starts + H, -1)
        covered = np.cumsum(marks[:-1]) > 0
        rows = windows.features[src][covered]
        lo = np.minimum(lo, rows.min(axis=0))
        hi = np.maximum(hi, rows.max(axis=0))
    return NormStats(lo, hi)
