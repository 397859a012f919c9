"""Built-in forward-map families used by the theory suite and the CLI."""
from __future__ import annotations

import numpy as np

from .inversion import ForwardMap
from .numkit import RngStream


def scalar_map(fn, name="scalar") -> ForwardMap:
    """Wrap a numpy-vectorized scalar function as a 1-D ForwardMap."""
    return ForwardMap(1, 1, fn=lambda x: fn(x), batch_fn=lambda xs: fn(xs), name=name)


def linear_map(a, h=None, name="linear") -> ForwardMap:
    """F(x) = A x + h in column convention (rows of X map to X @ A.T + h)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    h = np.zeros(a.shape[0]) if h is None else np.asarray(h, dtype=np.float64)
    return ForwardMap(a.shape[1], a.shape[0], fn=lambda x: a @ x + h,
                      batch_fn=lambda xs: xs @ a.T + h, name=name)


def sin_linear_map(a, amplitude=0.01, frequency=1.0, h=None, name="sin-linear") -> ForwardMap:
    """F(x) = A x + amplitude * sin(frequency * x) + h (elementwise sine)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if a.shape[0] != a.shape[1]:
        raise ValueError("sin-perturbed map needs a square A")
    h = np.zeros(a.shape[0]) if h is None else np.asarray(h, dtype=np.float64)

    def fn(x):
        return a @ x + amplitude * np.sin(frequency * x) + h

    def batch(xs):
        return xs @ a.T + amplitude * np.sin(frequency * xs) + h

    return ForwardMap(a.shape[1], a.shape[0], fn=fn, batch_fn=batch, name=name)


def jacobian_sin_linear(a, amplitude, frequency, xs) -> np.ndarray:
    """Analytic row-convention Jacobians of :func:`sin_linear_map` at rows of xs."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    xs = np.atleast_2d(xs)
    diag = amplitude * frequency * np.cos(frequency * xs)
    j = np.broadcast_to(a.T, (len(xs),) + a.shape).copy()
    idx = np.arange(a.shape[0])
    j[:, idx, idx] += diag
    return j


def random_well_conditioned(dim: int, rng: RngStream, max_cond=10.0) -> np.ndarray:
    """Random square matrix with condition number <= max_cond."""
    while True:
        a = rng.normal((dim, dim))
        s = np.linalg.svd(a, compute_uv=False)
        if s[-1] > 0 and s[0] / s[-1] <= max_cond:
            return a


def four_x_plus_sin():
    return scalar_map(lambda x: 4.0 * x + np.sin(x), name="4x+sin(x)")
