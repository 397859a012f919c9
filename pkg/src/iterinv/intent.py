"""Keyframe-position trajectory embedding."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


@dataclass(frozen=True)
class EmbedConfig:
    keyframes: int = 8
    normalize: bool = True
    c_max: float = 1.0  # position scale used when normalize is on

    def __post_init__(self):
        if self.keyframes < 2:
            raise InvalidInput("keyframes must be >= 2")

    @property
    def dim(self) -> int:
        return 2 * self.keyframes


@dataclass(frozen=True)
class Intent:
    values: np.ndarray
    keyframes: int
    horizon: int

    @property
    def dim(self) -> int:
        return len(self.values)


def keyframe_indices(horizon: int, keyframes: int) -> np.ndarray:
    """``keyframes`` state indices evenly spread over [0, horizon], endpoints included."""
    return np.rint(np.linspace(0, horizon, keyframes)).astype(int)


def embed_many(states, cfg: EmbedConfig) -> np.ndarray:
    """Intent vectors for stacked state trajectories of shape (n, T + 1, 4)."""
    states = np.asarray(states, dtype=np.float64)
    horizon = states.shape[-2] - 1
    if states.shape[-2] < cfg.keyframes:
        raise InvalidInput(f"{states.shape[-2]} states cannot supply {cfg.keyframes} keyframes")
    pos = states[..., keyframe_indices(horizon, cfg.keyframes), :2]
    if cfg.normalize:
        pos = pos / cfg.c_max
    return pos.reshape(states.shape[:-2] + (2 * cfg.keyframes,))


def embed(traj_states, cfg: EmbedConfig) -> Intent:
    states = np.asarray(traj_states, dtype=np.float64)
    if states.ndim != 2:
        raise InvalidInput("embed takes one (T + 1, 4) state sequence")
    return Intent(embed_many(states, cfg), cfg.keyframes, len(states) - 1)


def write_intent_row(intent: Intent, fh) -> None:
    csv.writer(fh, lineterminator="\n").writerow(
        [intent.keyframes, intent.horizon] + [repr(float(v)) for v in intent.values])


def read_intent_row(line: str) -> Intent:
    fields = next(csv.reader([line]))
    k, h = int(fields[0]), int(fields[1])
    values = np.array([float(v) for v in fields[2:]])
    if len(values) != 2 * k:
        raise InvalidInput(f"intent row has {len(values)} values for {k} keyframes")
    return Intent(values, k, h)
