"""Dense linear algebra helpers and the seeded random source.

Matrices are plain 2-D float64 numpy arrays, vectors 1-D arrays. Points are
stored as rows, so an affine map acts on the right: ``y = x @ theta + bias``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyData, InvalidInput

DEFAULT_RANK_TOL = 1e-10


def as_matrix(a, name="matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise InvalidInput(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInput(f"{name} has non-finite entries")
    return m


@dataclass(frozen=True)
class AffineFit:
    theta: np.ndarray  # (d_in, d_out)
    bias: np.ndarray  # (d_out,)
    residual_rms: float
    effective_rank: int

    def __call__(self, x):
        return np.asarray(x, dtype=np.float64) @ self.theta + self.bias


def _svd(m):
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return u, s, vt


def affine_least_squares(inputs, targets, ridge: float = 0.0,
                         rank_tolerance: float = DEFAULT_RANK_TOL) -> AffineFit:
    """Fit ``targets ~ inputs @ theta + bias`` in the least-squares sense.

    Minimizes ``sum_i |x_i theta + b - t_i|^2 + ridge * |theta|_F^2``; the
    bias is never penalized. The centered problem is solved through the SVD
    of the centered inputs, so rank-deficient data yields the minimum-norm
    theta (the pseudoinverse solution) instead of failing.
    """
    x = np.asarray(inputs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if t.ndim == 1:
        t = t[:, None]
    if x.shape[0] == 0 or t.shape[0] == 0:
        raise EmptyData("affine_least_squares needs at least one point")
    x = as_matrix(x, "inputs")
    t = as_matrix(t, "targets")
    if x.shape[0] != t.shape[0]:
        raise InvalidInput(f"row mismatch: {x.shape[0]} inputs vs {t.shape[0]} targets")
    if not (ridge >= 0 and np.isfinite(ridge)):
        raise InvalidInput(f"ridge must be finite and >= 0, got {ridge}")

    x_mean = x.mean(axis=0)
    t_mean = t.mean(axis=0)
    xc = x - x_mean
    tc = t - t_mean

    u, s, vt = _svd(xc)
    keep = s > rank_tolerance * s[0] if s.size and s[0] > 0 else np.zeros_like(s, dtype=bool)
    if ridge > 0:
        gain = np.where(keep, s / (s * s + ridge), 0.0)
    else:
        gain = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        theta = vt.T @ (gain[:, None] * (u.T @ tc))
    if not np.all(np.isfinite(theta)):
        raise InvalidInput("least-squares coefficients overflow float64")
    bias = t_mean - x_mean @ theta

    resid = x @ theta + bias - t
    rms = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
    return AffineFit(theta=theta, bias=bias, residual_rms=rms, effective_rank=int(keep.sum()))


def pseudo_inverse(m, rank_tolerance: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values below ``rank_tolerance`` times the largest one are
    treated as zero. The zero matrix maps to the zero matrix (transposed).
    """
    a = as_matrix(m, "m")
    if a.size == 0:
        return np.zeros((a.shape[1], a.shape[0]))
    u, s, vt = _svd(a)
    if s[0] == 0:
        return np.zeros((a.shape[1], a.shape[0]))
    keep = s > rank_tolerance * s[0]
    with np.errstate(over="ignore", invalid="ignore"):
        inv_s = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
        out = (vt.T * inv_s) @ u.T
    if not np.all(np.isfinite(out)):
        raise InvalidInput("pseudoinverse overflows float64 (singular values too small)")
    return out


class RngStream:
    """Counter-based deterministic random source.

    Backed by numpy's Philox generator keyed from ``(seed, *stream)``, so a
    substream for e.g. ``(iteration, rollout_index)`` is reproducible and
    independent of how many draws other substreams made. ``counter`` counts
    the scalar draws taken from this stream.
    """

    def __init__(self, seed: int, stream: tuple = ()):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self.stream = tuple(int(s) for s in stream)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self._gen = np.random.Generator(np.random.Philox(seq))
        self.counter = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream}, counter={self.counter})"

    def substream(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(ids))

    def normal(self, shape) -> np.ndarray:
        out = self._gen.standard_normal(shape)
        self.counter += out.size
        return out

    def uniform(self, low, high, shape) -> np.ndarray:
        out = self._gen.uniform(low, high, shape)
        self.counter += out.size
        return out

    def integers(self, low, high, shape) -> np.ndarray:
        out = self._gen.integers(low, high, shape)
        self.counter += out.size
        return out


def gaussian_vector(rng: RngStream, dim: int, scale: float) -> np.ndarray:
    """``dim`` i.i.d. draws from N(0, scale^2)."""
    if scale < 0:
        raise InvalidInput(f"scale must be >= 0, got {scale}")
    if scale == 0:
        return np.zeros(dim)
    return scale * rng.normal(dim)
