"""Intent-conditioned affine policy over handcrafted features.

Features are the intent, optionally the current state, and a time encoding.
With the ``per_step`` encoding the feature vector is ``onehot(t) (x) [z, s, 1]``,
i.e. an independent affine map per time step; this is what makes the
particle's inverse exactly representable.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyData, InvalidInput
from .numkit import affine_least_squares

TIME_ENCODINGS = ("normalized_scalar", "one_hot", "per_step")


@dataclass(frozen=True)
class FeatureSpec:
    intent_dim: int
    horizon: int
    use_state: bool = True
    time_encoding: str = "per_step"
    use_intent: bool = True

    def __post_init__(self):
        if self.time_encoding not in TIME_ENCODINGS:
            raise InvalidInput(f"time_encoding must be one of {TIME_ENCODINGS}")
        if not self.use_intent:
            raise InvalidInput("use_intent is always true")

    @property
    def base_dim(self) -> int:
        return self.intent_dim + 4 * self.use_state

    @property
    def feature_dim(self) -> int:
        if self.time_encoding == "per_step":
            return self.horizon * (self.base_dim + 1)
        return self.base_dim + (1 if self.time_encoding == "normalized_scalar" else self.horizon)


def default_time_encoding(horizon: int) -> str:
    return "one_hot" if horizon <= 64 else "normalized_scalar"


def _intent_values(intent):
    return np.asarray(getattr(intent, "values", intent), dtype=np.float64)


def _base(z, s, spec):
    return np.concatenate([z, s], axis=-1) if spec.use_state else z


def featurize(intent, state, t: int, spec: FeatureSpec) -> np.ndarray:
    if not 0 <= t < spec.horizon:
        raise InvalidInput(f"t = {t} outside [0, {spec.horizon})")
    z = _intent_values(intent)
    if len(z) != spec.intent_dim:
        raise InvalidInput(f"intent has dim {len(z)}, spec expects {spec.intent_dim}")
    base = _base(z, np.asarray(state, dtype=np.float64), spec)
    if spec.time_encoding == "normalized_scalar":
        return np.concatenate([base, [t / spec.horizon]])
    if spec.time_encoding == "one_hot":
        onehot = np.zeros(spec.horizon)
        onehot[t] = 1.0
        return np.concatenate([base, onehot])
    out = np.zeros(spec.feature_dim)
    width = spec.base_dim + 1
    out[t * width:(t + 1) * width] = np.concatenate([base, [1.0]])
    return out


@dataclass(frozen=True)
class PolicyHandle:
    weights: np.ndarray  # (feature_dim, 2)
    bias: np.ndarray  # (2,)
    spec: FeatureSpec

    def __post_init__(self):
        if self.weights.shape != (self.spec.feature_dim, 2) or self.bias.shape != (2,):
            raise InvalidInput("policy parameter shapes do not match the feature spec")

    @classmethod
    def zeros(cls, spec: FeatureSpec) -> "PolicyHandle":
        return cls(np.zeros((spec.feature_dim, 2)), np.zeros(2), spec)

    def act_batch(self, intents, states, t: int) -> np.ndarray:
        """Actions for n (intent, state) rows at a shared time step t."""
        spec = self.spec
        base = _base(np.asarray(intents, dtype=np.float64), np.asarray(states, dtype=np.float64), spec)
        if spec.time_encoding == "per_step":
            width = spec.base_dim + 1
            block = self.weights[t * width:(t + 1) * width]
            return base @ block[:-1] + block[-1] + self.bias
        n_base = spec.base_dim
        out = base @ self.weights[:n_base] + self.bias
        if spec.time_encoding == "normalized_scalar":
            return out + (t / spec.horizon) * self.weights[n_base]
        return out + self.weights[n_base + t]


def act(policy: PolicyHandle, intent, state, t: int) -> np.ndarray:
    return featurize(intent, state, t, policy.spec) @ policy.weights + policy.bias


@dataclass(frozen=True)
class TrainSample:
    intent: np.ndarray
    state: np.ndarray
    t: int
    action: np.ndarray


def fit_arrays(intents, states, times, actions, spec: FeatureSpec, ridge: float = 1e-8) -> PolicyHandle:
    """Fit on flat per-sample arrays; see :func:`fit_policy`."""
    n = len(actions)
    if n == 0:
        raise EmptyData("no training samples")
    intents = np.asarray(intents, dtype=np.float64)
    states = np.asarray(states, dtype=np.float64)
    times = np.asarray(times)
    actions = np.asarray(actions, dtype=np.float64)
    if np.any((times < 0) | (times >= spec.horizon)):
        raise InvalidInput("sample time outside the horizon")
    if spec.time_encoding != "per_step":
        feats = np.array([featurize(z, s, int(t), spec) for z, s, t in zip(intents, states, times)])
        fit = affine_least_squares(feats, actions, ridge=ridge * n)
        return PolicyHandle(fit.theta, fit.bias, spec)
    base = _base(intents, states, spec)
    width = spec.base_dim + 1
    weights = np.zeros((spec.feature_dim, 2))
    for t in range(spec.horizon):
        rows = times == t
        k = int(rows.sum())
        if k == 0:
            continue
        fit = affine_least_squares(base[rows], actions[rows], ridge=ridge * k)
        weights[t * width:(t + 1) * width - 1] = fit.theta
        weights[(t + 1) * width - 1] = fit.bias
    return PolicyHandle(weights, np.zeros(2), spec)


def fit_policy(samples, spec: FeatureSpec, ridge: float = 1e-8) -> PolicyHandle:
    """Closed-form ridge-regularized affine regression from features to actions.

    Minimizes mean squared action error plus ``ridge * |W|^2`` (intercepts
    unpenalized). With ``per_step`` the problem separates into one affine
    regression per time step.
    """
    if not samples:
        raise EmptyData("no training samples")
    return fit_arrays(np.array([s.intent for s in samples]), np.array([s.state for s in samples]),
                      np.array([s.t for s in samples]), np.array([s.action for s in samples]), spec, ridge)


def fit_trajectories(intents, states, actions, spec: FeatureSpec, ridge: float = 1e-8) -> PolicyHandle:
    """Teacher-forced fit on whole trajectories.

    intents (n, d), states (n, T + 1, 4), actions (n, T, 2): every step t of
    every trajectory becomes a sample (intent, states[t], t) -> actions[t].
    """
    intents = np.asarray(intents, dtype=np.float64)
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    n, horizon = actions.shape[:2]
    if n == 0:
        raise EmptyData("no training trajectories")
    z = np.repeat(intents, horizon, axis=0)
    s = states[:, :horizon].reshape(-1, 4)
    t = np.tile(np.arange(horizon), n)
    return fit_arrays(z, s, t, actions.reshape(-1, 2), spec, ridge)


def action_mse(policy: PolicyHandle, intents, states, actions) -> float:
    """Mean squared action error of teacher-forced predictions."""
    actions = np.asarray(actions, dtype=np.float64)
    horizon = actions.shape[1]
    err = [policy.act_batch(intents, states[:, t], t) - actions[:, t] for t in range(horizon)]
    return float(np.mean(np.sum(np.square(err), axis=-1)))


# -- checkpoint ------------------------------------------------------------

def write_checkpoint(policy: PolicyHandle, fh, seed=None, iteration=None) -> None:
    spec = policy.spec
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("key", "value"))
    for key, val in (("intent_dim", spec.intent_dim), ("horizon", spec.horizon),
                     ("use_state", int(spec.use_state)), ("time_encoding", spec.time_encoding),
                     ("seed", "" if seed is None else seed), ("iteration", "" if iteration is None else iteration)):
        w.writerow((key, val))
    w.writerow(("bias",) + tuple(repr(float(v)) for v in policy.bias))
    for row in policy.weights:
        w.writerow(("weight",) + tuple(repr(float(v)) for v in row))


def read_checkpoint(fh):
    """Returns ``(policy, meta)`` where meta holds seed and iteration."""
    rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != ("key", "value"):
        raise InvalidInput("not a policy checkpoint")
    meta, weights, bias = {}, [], None
    for r in rows[1:]:
        if r[0] == "weight":
            weights.append([float(v) for v in r[1:]])
        elif r[0] == "bias":
            bias = np.array([float(v) for v in r[1:]])
        else:
            meta[r[0]] = r[1]
    try:
        spec = FeatureSpec(int(meta["intent_dim"]), int(meta["horizon"]), bool(int(meta["use_state"])),
                           meta["time_encoding"])
    except KeyError as exc:
        raise InvalidInput(f"checkpoint missing field {exc}") from None
    policy = PolicyHandle(np.array(weights).reshape(-1, 2), bias, spec)
    info = {k: (int(meta[k]) if meta.get(k) else None) for k in ("seed", "iteration")}
    return policy, info
