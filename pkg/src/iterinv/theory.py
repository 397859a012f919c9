"""Empirical certificates for the convergence results of iterative inversion.

Every bound here is computed from the closed-form constant the theory gives
(slope ratio, contraction factor 1 - eps, radius rho), with the constants
themselves estimated by dense grids or finite differences so the forward map
stays a black box.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NotMonotone, PreconditionFailed, SingularJacobian
from .inversion import (ForwardMap, InversionProblem, InversionTrace, initial_state,
                        iterate_once, mean_update, run)
from .maps import linear_map, random_well_conditioned
from .numkit import RngStream

ABS_TOL = 1e-9
REL_TOL = 1e-7
DEFAULT_GRID = 2001


def within(observed, bound, abs_tol=ABS_TOL, rel_tol=REL_TOL) -> bool:
    return observed <= bound + abs_tol + rel_tol * abs(bound)


@dataclass(frozen=True)
class SlopeStats:
    s_min: float  # min |secant slope|
    s_max: float
    slope_ratio: float
    epsilon: Optional[float]  # None when ratio > 2 (condition not met)
    monotone_increasing: bool

    @property
    def contraction(self) -> Optional[float]:
        return None if self.epsilon is None else 1.0 - self.epsilon

    def theta_interval(self):
        lo, hi = 1.0 / self.s_max, 1.0 / self.s_min
        return (lo, hi) if self.monotone_increasing else (-hi, -lo)


@dataclass(frozen=True)
class AssumptionBounds:
    gamma: float
    zeta: float
    beta: float
    lam: float
    delta: float
    mu: float
    rho: float
    single_sample: bool = False

    @property
    def contraction(self) -> float:
        """beta (1 + delta) (gamma + mu): must be < 1 for the ball result."""
        return self.beta * (1.0 + self.delta) * (self.gamma + self.mu)

    @classmethod
    def from_constants(cls, gamma, zeta, beta, lam, delta, single_sample=False):
        zbd = zeta * beta * delta
        mu = zeta ** 2 * beta * delta / (1.0 - zbd) if zbd < 1 else float("inf")
        denom = 1.0 - beta * (1.0 + delta) * (mu + gamma)
        rho = 2.0 * lam * beta * (1.0 + delta) * (mu + zeta) / denom if denom > 0 else float("inf")
        if lam == 0 and denom > 0:
            rho = 0.0
        return cls(gamma, zeta, beta, lam, delta, mu, rho, single_sample)


@dataclass
class Certificate:
    certificate_id: str  # T1, T2, T3, T4, L1
    holds: bool
    worst_observed: float
    bound: float
    trace: Optional[InversionTrace] = None
    iterations: int = 0
    map_name: str = ""
    seed: Optional[int] = None
    details: dict = field(default_factory=dict)


CERTIFICATE_COLUMNS = ("certificate_id", "holds", "bound", "worst_observed", "iterations", "map_name", "seed")


def write_certificates_csv(certs, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CERTIFICATE_COLUMNS)
    for c in certs:
        w.writerow((c.certificate_id, str(c.holds).lower(), repr(float(c.bound)), repr(float(c.worst_observed)),
                    c.iterations, c.map_name, "" if c.seed is None else c.seed))


# -- slope statistics -------------------------------------------------------

def estimate_slopes(fmap: ForwardMap, domain_lo: float, domain_hi: float,
                    grid: int = DEFAULT_GRID) -> SlopeStats:
    """Min/max secant slope over every pair of a uniform grid."""
    if grid < 3:
        raise ValueError("grid must be >= 3")
    if not domain_lo < domain_hi:
        raise ValueError("need domain_lo < domain_hi")
    xs = np.linspace(domain_lo, domain_hi, grid)
    fs = fmap.eval_many(xs[:, None])[:, 0]
    s_min, s_max = np.inf, -np.inf
    # row-blocked so memory stays O(grid * block)
    block = max(1, 2_000_000 // grid)
    for start in range(0, grid - 1, block):
        i = np.arange(start, min(start + block, grid - 1))
        dx = xs[None, :] - xs[i, None]
        df = fs[None, :] - fs[i, None]
        mask = np.arange(grid)[None, :] > i[:, None]
        slopes = df[mask] / dx[mask]
        s_min = min(s_min, slopes.min())
        s_max = max(s_max, slopes.max())
    if s_min <= 0 <= s_max:
        raise NotMonotone(f"{fmap.name}: secant slopes span [{s_min:.3g}, {s_max:.3g}]")
    increasing = s_min > 0
    lo, hi = (s_min, s_max) if increasing else (-s_max, -s_min)
    ratio = hi / lo
    eps = 2.0 - ratio if ratio <= 2.0 else None
    return SlopeStats(float(lo), float(hi), float(ratio), None if eps is None else float(eps), bool(increasing))


def with_epsilon(stats: SlopeStats, epsilon: float) -> SlopeStats:
    """Copy of ``stats`` with an overridden epsilon (used for negative controls)."""
    return SlopeStats(stats.s_min, stats.s_max, stats.slope_ratio, epsilon, stats.monotone_increasing)


def inverse_by_bisection(fmap: ForwardMap, y: float, lo: float, hi: float, tol: float = 1e-12) -> float:
    f_lo = fmap.eval(lo)[0] - y
    f_hi = fmap.eval(hi)[0] - y
    # widen until bracketed
    width = hi - lo
    while f_lo * f_hi > 0:
        width *= 2
        lo, hi = lo - width, hi + width
        f_lo = fmap.eval(lo)[0] - y
        f_hi = fmap.eval(hi)[0] - y
        if width > 1e12:
            raise PreconditionFailed(f"could not bracket F^-1({y})")
    while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        f_mid = fmap.eval(mid)[0] - y
        if f_mid == 0:
            return mid
        if (f_mid > 0) == (f_hi > 0):
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)


# -- linear maps: exact after one iteration ---------------------------------

def certify_linear_oneshot(dim: int, trials: int, rng: RngStream, max_cond: float = 1e6) -> Certificate:
    worst = 0.0
    redraws = 0
    m = dim + 2
    for k in range(trials):
        sub = rng.substream(k)
        a = random_well_conditioned(dim, sub)
        h = sub.normal(dim)
        fmap = linear_map(a, h, name=f"linear-{dim}d")
        while True:
            x0 = sub.normal((m, dim))
            fc = fmap.eval_many(x0)
            fc -= fc.mean(axis=0)
            s = np.linalg.svd(fc, compute_uv=False)
            if s[-1] > 0 and s[0] / s[-1] <= max_cond:
                break
            redraws += 1
        y = sub.normal((m, dim)) * 5.0
        problem = InversionProblem(fmap, y, x0, max_iterations=1, residual_target=1e-300)
        trace = run(problem)
        r0 = trace.states[0].mean_residual
        r1 = trace.states[1].mean_residual
        worst = max(worst, r1 / r0 if r0 > 0 else r1)
    bound = 1e-8
    return Certificate("T1", worst <= bound, worst, bound, iterations=1, map_name=f"linear-{dim}d",
                       seed=rng.seed, details={"trials": trials, "redraws": redraws})


# -- scalar maps: per-point contraction, mean contraction, slope bounds ----

def _residual_floor(y) -> float:
    return 1e-9 * (1.0 + float(np.max(np.abs(y))))


def certify_two_point_contraction(fmap: ForwardMap, stats: SlopeStats, y, x0, iterations: int,
                                  seed=None) -> Certificate:
    """Per-point residual contraction ``|F(x_i^{n+1}) - y_i| <= (1 - eps)|F(x_i^n) - y_i|``.

    Ratios are only measured while the previous residual is above a
    round-off floor; below it a ratio compares noise against noise.
    """
    if stats.epsilon is None or stats.epsilon <= 0:
        raise PreconditionFailed("two-point certificate needs epsilon > 0")
    y = np.asarray(y, dtype=np.float64).reshape(2, 1)
    x0 = np.asarray(x0, dtype=np.float64).reshape(2, 1)
    if x0[0, 0] == x0[1, 0]:
        raise PreconditionFailed("x0 must hold two distinct points")
    problem = InversionProblem(fmap, y, x0, max_iterations=iterations, residual_target=1e-300)
    state = initial_state(problem)
    trace = InversionTrace(states=[state], total_map_evaluations=2, desired_outputs=problem.desired_outputs)
    floor = _residual_floor(y)
    worst = 0.0
    for _ in range(iterations):
        if state.per_point_residuals.max() <= floor:
            break
        nxt = iterate_once(state, problem)
        prev, cur = state.per_point_residuals, nxt.per_point_residuals
        live = prev > floor
        if np.any(live):
            worst = max(worst, float(np.max(cur[live] / prev[live])))
        trace.states.append(nxt)
        trace.total_map_evaluations += 2
        state = nxt
    trace.converged = state.per_point_residuals.max() <= floor
    bound = stats.contraction
    return Certificate("T3", within(worst, bound), worst, bound, trace=trace,
                       iterations=state.iteration, map_name=fmap.name, seed=seed)


def certify_mean_contraction(fmap: ForwardMap, stats: SlopeStats, y, x0, iterations: int,
                             seed=None) -> Certificate:
    """Mean-input contraction toward F^-1(mean y) while inputs stay one-sided."""
    if stats.epsilon is None or stats.epsilon <= 0:
        raise PreconditionFailed("mean-contraction certificate needs epsilon > 0")
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1, 1)
    lo, hi = float(min(x0.min(), -1.0)), float(max(x0.max(), 1.0))
    x_star = inverse_by_bisection(fmap, float(y.mean()), lo, hi)

    def one_sided(x):
        return bool(np.all(x < x_star) or np.all(x > x_star))

    if not one_sided(x0):
        raise PreconditionFailed("initial inputs straddle F^-1(mean y)")
    problem = InversionProblem(fmap, y, x0, max_iterations=iterations, residual_target=1e-300)
    state = initial_state(problem)
    trace = InversionTrace(states=[state], total_map_evaluations=len(y), desired_outputs=problem.desired_outputs)
    floor = _residual_floor(y) / max(stats.s_min, 1e-300)
    worst = 0.0
    checked = 0
    for _ in range(iterations):
        if state.per_point_residuals.max() <= _residual_floor(y):
            break
        nxt = iterate_once(state, problem)
        if one_sided(state.inputs):
            d_prev = abs(state.inputs.mean() - x_star)
            d_next = abs(nxt.inputs.mean() - x_star)
            if d_prev > floor:
                worst = max(worst, d_next / d_prev)
                checked += 1
        trace.states.append(nxt)
        trace.total_map_evaluations += len(y)
        state = nxt
    bound = stats.contraction
    return Certificate("T4", within(worst, bound), worst, bound, trace=trace, iterations=state.iteration,
                       map_name=fmap.name, seed=seed, details={"x_star": x_star, "checked": checked})


def certify_theta_bounds(trace: InversionTrace, stats: SlopeStats) -> Certificate:
    """Every 1-D regression slope lies in [1/s_max, 1/s_min] (mirrored if decreasing)."""
    lo, hi = stats.theta_interval()
    worst = 0.0  # largest violation distance outside the interval
    for s in trace.states[1:]:
        theta = float(s.fit.theta[0, 0])
        worst = max(worst, lo - theta, theta - hi)
    holds = worst <= ABS_TOL
    return Certificate("L1", holds, worst, 0.0, trace=trace, iterations=trace.iterations,
                       details={"interval": (lo, hi)})


# -- perturbed linear maps: residual ball ---------------------------------

def finite_difference_jacobians(fmap: ForwardMap, xs, step=1e-6) -> np.ndarray:
    """Central-difference row-convention Jacobians at rows of ``xs``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    n, d = xs.shape
    jac = np.empty((n, d, fmap.out_dim))
    for i in range(d):
        h = step * np.maximum(1.0, np.abs(xs[:, i]))
        xp = xs.copy()
        xm = xs.copy()
        xp[:, i] += h
        xm[:, i] -= h
        jac[:, i, :] = (fmap.eval_many(xp) - fmap.eval_many(xm)) / (2 * h)[:, None]
    return jac


def _synthetic_clouds(lo, hi, rng: RngStream, clouds=32):
    d = len(lo)
    m = d + 2
    out = []
    for k in range(clouds):
        side = 0.1 * (hi - lo)
        corner = lo + rng.uniform(0.0, 1.0, d) * (hi - lo - side)
        out.append(corner + rng.uniform(0.0, 1.0, (m, d)) * side)
    return out


def approximation_errors(fmap: ForwardMap, input_clouds):
    """Measured (lambda, delta) over a sequence of input point clouds.

    lambda: max |mean F(X) - F(mean X)|; delta: max |J(mean X) J_est^-1 - I|,
    with J_est^-1 the empirical inverse Jacobian of the cloud.
    """
    from .inversion import estimate_inverse_jacobian

    lam = 0.0
    delta = 0.0
    for x in input_clouds:
        x = np.atleast_2d(x)
        fx = fmap.eval_many(x)
        xbar = x.mean(axis=0)
        lam = max(lam, float(np.linalg.norm(fx.mean(axis=0) - fmap.eval(xbar))))
        yc = fx - fx.mean(axis=0)
        if np.linalg.matrix_rank(yc) < fmap.out_dim:
            continue
        j_inv_est = estimate_inverse_jacobian(x, fx)
        j = finite_difference_jacobians(fmap, xbar[None, :])[0]
        delta = max(delta, float(np.linalg.norm(j @ j_inv_est - np.eye(len(j)), 2)))
    return lam, delta


def estimate_assumption_bounds(fmap: ForwardMap, region_lo, region_hi, grid: int = DEFAULT_GRID,
                               iterates=None, rng: Optional[RngStream] = None) -> AssumptionBounds:
    """Grid/finite-difference estimates of the Jacobian bounds plus measured approximation errors.

    gamma is the spectral norm of the entrywise range of J over the grid,
    which upper-bounds max |J(x1) - J(x2)|_2 over grid pairs. ``iterates`` is
    a sequence of input clouds (e.g. ``[s.inputs for s in trace.states]``);
    without it, small random clouds inside the box are used.
    """
    lo = np.atleast_1d(np.asarray(region_lo, dtype=np.float64))
    hi = np.atleast_1d(np.asarray(region_hi, dtype=np.float64))
    if lo.shape != hi.shape or np.any(lo > hi) or len(lo) != fmap.in_dim:
        raise ValueError("invalid region box")
    axes = [np.linspace(a, b, grid) if grid > 1 else np.array([0.5 * (a + b)]) for a, b in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
    jac = finite_difference_jacobians(fmap, pts)
    sv = np.linalg.svd(jac, compute_uv=False)
    zeta = float(sv[:, 0].max())
    if sv[:, -1].min() <= 1e-12 * zeta:
        raise SingularJacobian("finite-difference Jacobian is singular somewhere in the region")
    beta = float((1.0 / sv[:, -1]).max())
    single = len(pts) == 1
    if single:
        warnings.warn("single grid sample: gamma reported as 0", RuntimeWarning, stacklevel=2)
        gamma = 0.0
    else:
        spread = jac.max(axis=0) - jac.min(axis=0)
        gamma = float(np.linalg.norm(spread, 2))
    if iterates is None:
        iterates = _synthetic_clouds(lo, hi, rng or RngStream(0))
    lam, delta = approximation_errors(fmap, iterates)
    return AssumptionBounds.from_constants(gamma, zeta, beta, lam, delta, single)


def certify_multidim_ball(fmap: ForwardMap, bounds: AssumptionBounds, problem: InversionProblem,
                          tolerance: float = 1e-6, seed=None) -> Certificate:
    """Mean residual must enter the radius-rho ball around mean Y within max_iterations."""
    if not bounds.contraction < 1:
        raise PreconditionFailed(f"beta(1+delta)(gamma+mu) = {bounds.contraction:.4g} >= 1")
    if not bounds.zeta * bounds.beta * bounds.delta < 1:
        raise PreconditionFailed("delta >= 1/(zeta beta)")
    target = bounds.rho + tolerance
    trace = run(InversionProblem(fmap, problem.desired_outputs, problem.initial_inputs,
                                 max_iterations=problem.max_iterations, residual_target=target,
                                 ridge=problem.ridge, rank_tolerance=problem.rank_tolerance))
    best = min(s.mean_residual for s in trace.states)
    means = [s.inputs.mean(axis=0) for s in trace.states]
    steps = [float(np.linalg.norm(b - a)) for a, b in zip(means, means[1:])]
    ratios = [b / a for a, b in zip(steps, steps[1:]) if a > 0]
    return Certificate("T2", best <= target, best, target, trace=trace, iterations=trace.iterations,
                       map_name=fmap.name, seed=seed,
                       details={"rho": bounds.rho, "alpha": bounds.contraction, "step_ratios": ratios})


def eq4_max_error(trace: InversionTrace, desired=None) -> float:
    """Largest gap between the regression's next mean and the mean-update prediction.

    ``desired`` defaults to the outputs recorded on the trace.
    """
    desired = trace.desired_outputs if desired is None else desired
    if desired is None:
        raise ValueError("trace carries no desired outputs; pass them explicitly")
    worst = 0.0
    for prev, nxt in zip(trace.states, trace.states[1:]):
        pred = mean_update(prev, desired)
        worst = max(worst, float(np.max(np.abs(pred - nxt.inputs.mean(axis=0)))))
    return worst


# -- default certificate suite ---------------------------------------------

SUITE_IDS = ("T1", "T2", "T3", "T4", "L1")


def random_two_point_instances(count: int, rng: RngStream):
    """(y, x0) pairs: y uniform in [-20, 20], x0 two distinct points in [-10, 10]."""
    out = []
    for _ in range(count):
        y = rng.uniform(-20.0, 20.0, 2)
        while True:
            x0 = rng.uniform(-10.0, 10.0, 2)
            if abs(x0[0] - x0[1]) > 1e-3:
                break
        out.append((y, x0))
    return out


def random_one_sided_instances(count: int, rng: RngStream, fmap: ForwardMap, m: int = 5):
    """(y, x0) with all x0 strictly on one side of F^-1(mean y)."""
    out = []
    for _ in range(count):
        y = rng.uniform(-20.0, 20.0, m)
        x_star = inverse_by_bisection(fmap, float(y.mean()), -10.0, 10.0)
        side = 1.0 if rng.uniform(0.0, 1.0, 1)[0] < 0.5 else -1.0
        x0 = x_star + side * rng.uniform(0.5, 8.0, m)
        out.append((y, x0))
    return out


def sin_linear_ball_problem(rng: RngStream, points: int = 6):
    from .maps import sin_linear_map

    a = np.diag([3.0, 4.0])
    fmap = sin_linear_map(a, amplitude=0.01, name="diag(3,4)x+0.01sin(x)")
    y = rng.uniform(-5.0, 5.0, (points, 2))
    x0 = rng.uniform(-1.0, 1.0, (points, 2))
    return fmap, InversionProblem(fmap, y, x0, max_iterations=200, residual_target=1e-300)


def run_suite(ids=SUITE_IDS, seed: int = 0, dims=(1, 2, 3, 5), trials: int = 100, instances: int = 50,
              epsilon_override: Optional[float] = None, grid: int = DEFAULT_GRID, iterations: int = 40):
    """Run the selected certificates; returns a flat list of Certificate."""
    from .maps import four_x_plus_sin

    unknown = set(ids) - set(SUITE_IDS)
    if unknown:
        raise ValueError(f"unknown certificate ids {sorted(unknown)}")
    rng = RngStream(seed)
    certs = []
    if "T1" in ids:
        for d in dims:
            certs.append(certify_linear_oneshot(d, trials, rng.substream(1, d)))
    fmap = four_x_plus_sin()
    stats = None
    if {"T3", "T4", "L1"} & set(ids):
        stats = estimate_slopes(fmap, -30.0, 30.0, grid)
        if epsilon_override is not None:
            stats = with_epsilon(stats, epsilon_override)
    if "T3" in ids or "L1" in ids:
        t3 = [certify_two_point_contraction(fmap, stats, y, x0, iterations, seed=seed)
              for y, x0 in random_two_point_instances(instances, rng.substream(3))]
        if "T3" in ids:
            certs.append(_aggregate("T3", t3, fmap.name, seed))
        if "L1" in ids:
            l1 = [certify_theta_bounds(c.trace, stats) for c in t3]
            certs.append(_aggregate("L1", l1, fmap.name, seed))
    if "T4" in ids:
        t4 = [certify_mean_contraction(fmap, stats, y, x0, iterations, seed=seed)
              for y, x0 in random_one_sided_instances(instances, rng.substream(4), fmap)]
        certs.append(_aggregate("T4", t4, fmap.name, seed))
    if "T2" in ids:
        ball_map, problem = sin_linear_ball_problem(rng.substream(2))
        probe = run(problem)
        box = np.concatenate([s.inputs for s in probe.states])
        lo, hi = box.min(axis=0) - 0.5, box.max(axis=0) + 0.5
        bounds = estimate_assumption_bounds(ball_map, lo, hi, grid=min(grid, 201),
                                            iterates=[s.inputs for s in probe.states])
        certs.append(certify_multidim_ball(ball_map, bounds, problem, seed=seed))
    return certs


def _aggregate(certificate_id, certs, map_name, seed) -> Certificate:
    worst = max(certs, key=lambda c: c.worst_observed - c.bound)
    return Certificate(certificate_id, all(c.holds for c in certs), worst.worst_observed, worst.bound,
                       iterations=max(c.iterations for c in certs), map_name=map_name, seed=seed,
                       details={"instances": len(certs), "members": certs})
