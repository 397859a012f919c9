"""Iterative inversion for learning control (IT-IN) on the particle.

One iteration: sample a batch of intents mixing the steering set with the
previous iteration's relabeled intents, roll the current policy out with
exploration noise, relabel each rollout with its own intent, push into a
FIFO replay buffer and refit the policy on the whole buffer.
"""
from __future__ import annotations

import csv
import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import EmptyData, InvalidInput
from .intent import EmbedConfig, embed_many
from .numkit import RngStream
from .particle import EnvConfig, batch_mse, generate, rollout_batch
from .policy import FeatureSpec, PolicyHandle, action_mse, fit_trajectories

log = logging.getLogger(__name__)

# substream tags
_INIT, _BATCH, _ROLLOUT = 0, 1, 2


@dataclass(frozen=True)
class SteeringSet:
    intents: np.ndarray  # (M, d), may be empty for the no-steering ablation
    source_name: str = ""

    def __post_init__(self):
        z = np.asarray(self.intents, dtype=np.float64)
        if z.ndim != 2:
            z = z.reshape(len(z), -1)
        z.setflags(write=False)
        object.__setattr__(self, "intents", z)

    def __len__(self):
        return len(self.intents)


@dataclass(frozen=True)
class ItinConfig:
    batch_size: int = 64
    steering_ratio: float = 0.3
    noise_scale: Optional[float] = None  # default f_clip / 32
    buffer_multiplier: int = 40
    iterations: int = 40
    ridge: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.steering_ratio <= 1.0:
            raise InvalidInput(f"steering_ratio must lie in [0, 1], got {self.steering_ratio}")
        if self.batch_size < 1 or self.buffer_multiplier < 1:
            raise InvalidInput("batch_size and buffer_multiplier must be >= 1")
        if self.noise_scale is not None and self.noise_scale < 0:
            raise InvalidInput("noise_scale must be >= 0")
        if self.iterations < 0 or self.ridge < 0:
            raise InvalidInput("iterations and ridge must be >= 0")

    def noise_for(self, env: EnvConfig) -> float:
        return env.f_clip / 32.0 if self.noise_scale is None else self.noise_scale

    @property
    def capacity(self) -> int:
        return self.batch_size * self.buffer_multiplier


@dataclass(frozen=True)
class BufferEntry:
    intent: np.ndarray  # relabeled intent of the executed trajectory
    states: np.ndarray
    actions: np.ndarray  # executed (noisy, clipped) actions
    origin: tuple  # ("rollout", iteration, index, source) for identity tracking


class ReplayBuffer:
    """FIFO store of relabeled rollouts, capacity K x N."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidInput("capacity must be >= 1")
        self.capacity = capacity
        self.entries = deque(maxlen=capacity)

    def __len__(self):
        return len(self.entries)

    def push(self, entry: BufferEntry) -> None:
        self.entries.append(entry)

    def arrays(self):
        z = np.stack([e.intent for e in self.entries])
        s = np.stack([e.states for e in self.entries])
        a = np.stack([e.actions for e in self.entries])
        return z, s, a


def sample_batch(steer: SteeringSet, prev, cfg: ItinConfig, rng: RngStream):
    """floor(alpha N) intents from the steering set, the rest from prev.

    Sampling is uniform with replacement. An empty source is replaced by the
    other one. Returns (intents (N, d), sources) where sources[i] is
    ("steer", j) or ("prev", j).
    """
    prev = np.asarray(prev, dtype=np.float64).reshape(len(prev), -1) if len(prev) else np.empty((0, 0))
    n = cfg.batch_size
    if len(steer) == 0 and len(prev) == 0:
        raise EmptyData("both the steering set and the previous intents are empty")
    n_steer = int(np.floor(cfg.steering_ratio * n + 1e-12))
    if len(steer) == 0:
        n_steer = 0
    elif len(prev) == 0:
        n_steer = n
    idx_s = rng.integers(0, len(steer), n_steer) if n_steer else np.empty(0, dtype=int)
    idx_p = rng.integers(0, len(prev), n - n_steer) if n - n_steer else np.empty(0, dtype=int)
    parts = []
    if n_steer:
        parts.append(steer.intents[idx_s])
    if n - n_steer:
        parts.append(prev[idx_p])
    sources = [("steer", int(j)) for j in idx_s] + [("prev", int(j)) for j in idx_p]
    return np.concatenate(parts), sources


@dataclass
class ItinState:
    policy: PolicyHandle
    buffer: ReplayBuffer
    prev_intents: np.ndarray
    iteration: int = 0


@dataclass
class ItinReport:
    per_iteration: list = field(default_factory=list)
    final_policy: Optional[PolicyHandle] = None
    baseline_probe_mse: float = float("nan")
    final_state: Optional[ItinState] = None

    @property
    def final_probe_mse(self) -> float:
        return self.per_iteration[-1]["probe_test_mse"] if self.per_iteration else self.baseline_probe_mse


REPORT_COLUMNS = ("iteration", "train_action_mse", "probe_test_mse", "buffer_size")


def write_report_csv(report: ItinReport, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for row in report.per_iteration:
        w.writerow((row["iteration"], repr(row["train_action_mse"]), repr(row["probe_test_mse"]),
                    row["buffer_size"]))


def feature_spec_for(env: EnvConfig, embed_cfg: EmbedConfig, time_encoding="per_step") -> FeatureSpec:
    return FeatureSpec(embed_cfg.dim, env.horizon, use_state=True, time_encoding=time_encoding)


def itin_iteration(state: ItinState, steer: SteeringSet, cfg: ItinConfig, env: EnvConfig,
                   embed_cfg: EmbedConfig, rng: RngStream) -> dict:
    """Run one IT-IN iteration in place on ``state``; returns iteration metrics."""
    n = state.iteration
    batch, sources = sample_batch(steer, state.prev_intents, cfg, rng.substream(_BATCH, n))
    noise = cfg.noise_for(env)
    rngs = [rng.substream(_ROLLOUT, n, i) for i in range(len(batch))]
    states, actions = rollout_batch(state.policy, batch, env, noise, rngs)
    relabeled = embed_many(states, embed_cfg)
    for i in range(len(batch)):
        state.buffer.push(BufferEntry(relabeled[i], states[i], actions[i], ("rollout", n, i, sources[i])))
    z, s, a = state.buffer.arrays()
    state.policy = fit_trajectories(z, s, a, state.policy.spec, cfg.ridge)
    state.prev_intents = relabeled
    state.iteration += 1
    return {"iteration": n, "train_action_mse": action_mse(state.policy, z, s, a), "buffer_size": len(state.buffer)}


def probe_arrays(probe_set):
    """Stack a list of (intent, Trajectory) pairs into (Z, reference positions)."""
    if not probe_set:
        return np.empty((0, 0)), np.empty((0, 0, 2))
    z = np.stack([np.asarray(getattr(i, "values", i), dtype=np.float64) for i, _ in probe_set])
    pos = np.stack([t.positions for _, t in probe_set])
    return z, pos


def probe_mse(policy: PolicyHandle, probe_set, env: EnvConfig) -> float:
    """Mean trajectory error of noise-free rollouts against the probe references."""
    z, ref = probe_arrays(probe_set)
    if len(z) == 0:
        return float("nan")
    states, _ = rollout_batch(policy, z, env, 0.0)
    return float(np.mean(batch_mse(states[..., :2], ref)))


def zero_policy_mse(probe_set) -> float:
    _, ref = probe_arrays(probe_set)
    return float(np.mean(batch_mse(np.zeros_like(ref), ref)))


def run_itin(steer: SteeringSet, cfg: ItinConfig, env: EnvConfig, probe_set, embed_cfg: Optional[EmbedConfig] = None,
             time_encoding: str = "per_step") -> ItinReport:
    embed_cfg = embed_cfg or EmbedConfig(c_max=env.c_max)
    spec = feature_spec_for(env, embed_cfg, time_encoding)
    rng = RngStream(cfg.seed)
    policy = PolicyHandle.zeros(spec)
    if len(steer):
        prev = steer.intents.copy()
    else:
        # no steering: seed D_prev with intents of noisy zero-policy rollouts
        init = rng.substream(_INIT)
        rngs = [init.substream(i) for i in range(cfg.batch_size)]
        states, _ = rollout_batch(policy, np.zeros((cfg.batch_size, spec.intent_dim)), env, cfg.noise_for(env), rngs)
        prev = embed_many(states, embed_cfg)
    state = ItinState(policy, ReplayBuffer(cfg.capacity), prev)
    report = ItinReport(baseline_probe_mse=probe_mse(policy, probe_set, env) if probe_set else float("nan"))
    for _ in range(cfg.iterations):
        metrics = itin_iteration(state, steer, cfg, env, embed_cfg, rng)
        metrics["probe_test_mse"] = probe_mse(state.policy, probe_set, env) if probe_set else float("nan")
        report.per_iteration.append(metrics)
        log.debug("iter %d: train %.4g probe %.4g", metrics["iteration"], metrics["train_action_mse"],
                  metrics["probe_test_mse"])
    report.final_policy = state.policy
    report.final_state = state
    return report


# -- experiments -----------------------------------------------------------

def make_split(name: str, steer_size: int, probe_size: int, env: EnvConfig, embed_cfg: EmbedConfig,
               seed: int, t_acc=None):
    """Disjoint steering set and probe set drawn from one generator stream."""
    trajs = generate(name, steer_size + probe_size, env, RngStream(seed, (7,)), t_acc=t_acc)
    z = embed_many(np.stack([t.states for t in trajs]), embed_cfg)
    steer = SteeringSet(z[:steer_size], name)
    probe = [(z[i], trajs[i]) for i in range(steer_size, len(trajs))]
    return steer, probe


def cross_evaluate(policies: dict, test_sets: dict, env: EnvConfig) -> dict:
    """Mean probe MSE of every policy on every test set.

    Returns ``table[test_name][policy_name]``: rows are test sets, columns
    the steering source each policy was trained with.
    """
    return {test: {name: probe_mse(pol, probe, env) for name, pol in policies.items()}
            for test, probe in test_sets.items()}


def steering_size_sweep(sizes, dataset: str, cfg: ItinConfig, env: EnvConfig, embed_cfg: Optional[EmbedConfig] = None,
                        seeds=(0,), probe_size: int = 200, t_acc=None, threads: int = 1,
                        time_encoding: str = "per_step") -> dict:
    """Final probe MSE per steering-set size, one entry per seed.

    For each seed one pool is generated; steering sets are prefixes of its
    steering part, the probe part is shared and never trained on. Seeds run
    on ``threads`` worker threads; results do not depend on scheduling.
    """
    sizes = list(sizes)
    if not sizes or not list(seeds):
        raise InvalidInput("sizes and seeds must be nonempty")
    embed_cfg = embed_cfg or EmbedConfig(c_max=env.c_max)

    def one_seed(seed):
        steer_all, probe = make_split(dataset, max(sizes), probe_size, env, embed_cfg, seed, t_acc)
        return [run_itin(SteeringSet(steer_all.intents[:n], dataset), replace(cfg, seed=seed), env, probe,
                         embed_cfg, time_encoding).final_probe_mse for n in sizes]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        per_seed = list(pool.map(one_seed, seeds))
    return {n: [row[j] for row in per_seed] for j, n in enumerate(sizes)}


def write_table_csv(table: dict, fh, corner="test_dataset") -> None:
    """2-level dict (row -> column -> value) as CSV."""
    w = csv.writer(fh, lineterminator="\n")
    cols = list(next(iter(table.values())).keys())
    w.writerow([corner] + cols)
    for row, vals in table.items():
        w.writerow([row] + [repr(float(vals[c])) for c in cols])
