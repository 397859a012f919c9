"""2-D point mass on a bounded frictionless plane, plus desired-behaviour datasets.

States are rows ``(x, y, vx, vy)``, actions rows ``(fx, fy)``; every function
accepts a leading batch dimension. The plane is the square
``[-c_max, c_max]^2`` centred on the fixed start state at the origin.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import BSpline

from .errors import InvalidInput
from .numkit import RngStream

log = logging.getLogger(__name__)

SPLINE_DEGREE = 2
SPLINE_CONTROL_POINTS = 5


@dataclass(frozen=True)
class EnvConfig:
    horizon: int = 32
    dt: float = 0.1
    c_max: Optional[float] = None  # default 2 * horizon * dt
    f_clip: float = 16.0
    f_acc: Optional[float] = None  # deceleration dataset random-force range, default f_clip / 4
    mass: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidInput("horizon must be >= 1")
        if not self.dt > 0:
            raise InvalidInput("dt must be > 0")
        if self.c_max is None:
            object.__setattr__(self, "c_max", 2.0 * self.horizon * self.dt)
        if self.f_acc is None:
            object.__setattr__(self, "f_acc", self.f_clip / 4.0)
        if not self.c_max > 0 or not self.f_clip > 0:
            raise InvalidInput("c_max and f_clip must be > 0")
        if self.mass != 1.0:
            raise InvalidInput("mass is fixed at 1")


def initial_state() -> np.ndarray:
    return np.zeros(4)


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (T + 1, 4)
    actions: np.ndarray  # (T, 2)

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.float64)
        a = np.asarray(self.actions, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != 4 or a.ndim != 2 or a.shape[1] != 2 or len(s) != len(a) + 1:
            raise InvalidInput(f"inconsistent trajectory shapes {s.shape}, {a.shape}")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)

    @property
    def horizon(self) -> int:
        return len(self.actions)

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]


def step(state, action, cfg: EnvConfig):
    """Semi-implicit Euler with unit mass: velocity first, then position.

    Forces are clipped to ``[-f_clip, f_clip]`` per component. A position
    leaving the plane is clamped to the wall and that velocity component zeroed.
    """
    s = np.asarray(state, dtype=np.float64)
    a = np.clip(np.asarray(action, dtype=np.float64), -cfg.f_clip, cfg.f_clip)
    v = s[..., 2:] + a * cfg.dt
    p = s[..., :2] + v * cfg.dt
    hit = np.abs(p) > cfg.c_max
    p = np.clip(p, -cfg.c_max, cfg.c_max)
    v = np.where(hit, 0.0, v)
    return np.concatenate([p, v], axis=-1)


def replay(actions, cfg: EnvConfig, s0=None) -> np.ndarray:
    """States produced by stepping ``actions`` (shape (..., T, 2)) from s0."""
    actions = np.asarray(actions, dtype=np.float64)
    s = np.broadcast_to(initial_state() if s0 is None else s0, actions.shape[:-2] + (4,)).copy()
    out = [s]
    for t in range(actions.shape[-2]):
        s = step(s, actions[..., t, :], cfg)
        out.append(s)
    return np.stack(out, axis=-2)


def touches_wall(states, cfg: EnvConfig) -> np.ndarray:
    return np.any(np.abs(np.asarray(states)[..., :2]) >= cfg.c_max, axis=(-1, -2))


def trajectory_mse(a: Trajectory, b: Trajectory) -> float:
    """Sum over time of the Euclidean distance between positions."""
    if a.horizon != b.horizon:
        raise InvalidInput(f"horizon mismatch: {a.horizon} vs {b.horizon}")
    return float(np.sum(np.linalg.norm(a.positions - b.positions, axis=1)))


def batch_mse(pos_a, pos_b) -> np.ndarray:
    """Per-trajectory :func:`trajectory_mse` on stacked (n, T + 1, 2) positions."""
    return np.sum(np.linalg.norm(np.asarray(pos_a) - np.asarray(pos_b), axis=-1), axis=-1)


# -- datasets --------------------------------------------------------------

def clamped_knots(n_ctrl: int, degree: int) -> np.ndarray:
    inner = np.linspace(0.0, 1.0, n_ctrl - degree + 1)
    return np.concatenate([np.zeros(degree), inner, np.ones(degree)])


def spline_positions(control_points, horizon: int) -> np.ndarray:
    """Clamped B-spline evaluated at horizon + 1 uniform parameter values."""
    ctrl = np.asarray(control_points, dtype=np.float64)
    curve = BSpline(clamped_knots(len(ctrl), SPLINE_DEGREE), ctrl, SPLINE_DEGREE)
    return curve(np.linspace(0.0, 1.0, horizon + 1))


def actions_from_positions(positions, dt: float) -> np.ndarray:
    """Actions whose semi-implicit Euler rollout from rest visits ``positions``.

    Velocities are backward differences ``v_t = (p_t - p_{t-1}) / dt`` with
    ``v_0 = 0`` (the fixed start is at rest); ``a_t = (v_{t+1} - v_t) / dt``.
    """
    p = np.asarray(positions, dtype=np.float64)
    v = np.zeros_like(p)
    v[..., 1:, :] = np.diff(p, axis=-2) / dt
    return np.diff(v, axis=-2) / dt


def gen_spline_dataset(count: int, cfg: EnvConfig, rng: RngStream, max_tries: int = 10_000_000) -> list:
    """Quadratic clamped B-spline paths with 5 control points in [0, c_max]^2.

    Curves are shifted so they start at the origin. Candidates whose
    reconstructed forces exceed f_clip, or that reach a wall, are resampled.
    """
    if count < 1:
        raise InvalidInput("count must be >= 1")
    out = []
    tried = 0
    chunk = max(256, 32 * count)
    while len(out) < count:
        if tried >= max_tries:
            raise RuntimeError(f"spline rejection sampling exhausted after {tried} candidates")
        ctrl = rng.uniform(0.0, cfg.c_max, (chunk, SPLINE_CONTROL_POINTS, 2))
        ctrl = ctrl - ctrl[:, :1, :]
        pos = np.stack([spline_positions(c, cfg.horizon) for c in ctrl])
        acts = actions_from_positions(pos, cfg.dt)
        ok = np.all(np.abs(acts) <= cfg.f_clip, axis=(1, 2))
        states = replay(acts[ok], cfg)
        ok_idx = np.flatnonzero(ok)
        keep = ~touches_wall(states, cfg)
        for i, s in zip(ok_idx[keep], states[keep]):
            if len(out) < count:
                out.append(Trajectory(s, acts[i]))
        tried += chunk
    log.info("splines: accepted %d of %d candidates", count, tried)
    return out


def deceleration_actions(random_forces, cfg: EnvConfig, t_acc: int) -> np.ndarray:
    """Complete a (n, t_acc, 2) random-force prefix with the halving-law tail."""
    n = random_forces.shape[0]
    acts = np.zeros((n, cfg.horizon, 2))
    acts[:, :t_acc] = random_forces
    s = np.zeros((n, 4))
    for t in range(cfg.horizon):
        if t >= t_acc:
            acts[:, t] = -0.5 * s[:, 2:] / cfg.dt
        s = step(s, acts[:, t], cfg)
    return acts


def gen_deceleration_dataset(count: int, cfg: EnvConfig, t_acc: Optional[int], rng: RngStream) -> list:
    """Random forces for t_acc steps, then each step halves the velocity."""
    if count < 1:
        raise InvalidInput("count must be >= 1")
    t_acc = cfg.horizon // 2 if t_acc is None else t_acc
    if not 1 <= t_acc < cfg.horizon:
        raise InvalidInput(f"need 1 <= t_acc < horizon, got {t_acc}")
    out = []
    tried = 0
    while len(out) < count:
        n = 2 * (count - len(out))
        forces = rng.uniform(-cfg.f_acc, cfg.f_acc, (n, t_acc, 2))
        acts = deceleration_actions(forces, cfg, t_acc)
        states = replay(acts, cfg)
        keep = ~touches_wall(states, cfg)
        for s, a in zip(states[keep], acts[keep]):
            if len(out) < count:
                out.append(Trajectory(s, a))
        tried += n
    if tried > count:
        log.info("deceleration: accepted %d of %d candidates", count, tried)
    return out


GENERATORS = ("splines", "deceleration")


def generate(name: str, count: int, cfg: EnvConfig, rng: RngStream, t_acc: Optional[int] = None) -> list:
    if name == "splines":
        return gen_spline_dataset(count, cfg, rng)
    if name == "deceleration":
        return gen_deceleration_dataset(count, cfg, t_acc, rng)
    raise InvalidInput(f"unknown generator {name!r}; expected one of {GENERATORS}")


# -- file format -----------------------------------------------------------

TRAJ_HEADER = ("t", "x", "y", "vx", "vy", "fx", "fy")


def write_trajectory_csv(traj: Trajectory, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRAJ_HEADER)
    for t, s in enumerate(traj.states):
        acts = [repr(float(v)) for v in traj.actions[t]] if t < traj.horizon else ["", ""]
        w.writerow([t] + [repr(float(v)) for v in s] + acts)


def read_trajectory_csv(fh) -> Trajectory:
    rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRAJ_HEADER:
        raise InvalidInput(f"bad trajectory header {rows[:1]}")
    body = rows[1:]
    states = np.array([[float(v) for v in r[1:5]] for r in body])
    actions = np.array([[float(v) for v in r[5:7]] for r in body[:-1]]).reshape(-1, 2)
    if body and any(body[-1][5:7]):
        raise InvalidInput("last trajectory row must have empty action columns")
    return Trajectory(states, actions)


# -- rollouts --------------------------------------------------------------

def rollout_batch(policy, intents, cfg: EnvConfig, noise_scale: float = 0.0, rngs=None):
    """Roll out ``policy`` from the fixed start for each row of ``intents``.

    ``policy`` needs ``act_batch(intents, states, t)``. Rollout i draws its
    whole (T, 2) noise sequence from ``rngs[i]`` up front, so results do not
    depend on batch composition. Returns (states (n, T+1, 4), executed
    actions (n, T, 2)), actions after noise and clipping.
    """
    z = np.atleast_2d(np.asarray(intents, dtype=np.float64))
    n, horizon = len(z), cfg.horizon
    if noise_scale > 0:
        if rngs is None or len(rngs) != n:
            raise InvalidInput("noisy rollouts need one RngStream per intent")
        noise = noise_scale * np.stack([r.normal((horizon, 2)) for r in rngs])
    else:
        noise = np.zeros((n, horizon, 2))
    states = np.empty((n, horizon + 1, 4))
    actions = np.empty((n, horizon, 2))
    s = np.zeros((n, 4))
    states[:, 0] = s
    for t in range(horizon):
        a = np.clip(policy.act_batch(z, s, t) + noise[:, t], -cfg.f_clip, cfg.f_clip)
        actions[:, t] = a
        s = step(s, a, cfg)
        states[:, t + 1] = s
    return states, actions


def rollout(policy, intent, cfg: EnvConfig, noise_scale: float = 0.0, rng: Optional[RngStream] = None) -> Trajectory:
    z = np.asarray(getattr(intent, "values", intent), dtype=np.float64)
    states, actions = rollout_batch(policy, z[None, :], cfg, noise_scale, None if rng is None else [rng])
    return Trajectory(states[0], actions[0])
