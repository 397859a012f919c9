"""Iterative inversion of a black-box forward map.

Each iteration regresses the current inputs on their observed outputs with
an affine model, then feeds the desired outputs through that regressor to
get the next inputs. Row-vector convention throughout: a Jacobian
``J[i, j] = dF_j / dx_i`` so that ``dF = dx @ J``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateIteration, InvalidInput, SingularJacobian
from .numkit import DEFAULT_RANK_TOL, AffineFit, affine_least_squares, as_matrix, pseudo_inverse


@dataclass(frozen=True)
class ForwardMap:
    """Deterministic map R^in_dim -> R^out_dim, evaluated pointwise.

    ``batch_fn`` is an optional vectorized twin of ``fn`` taking an
    (n, in_dim) array; it must agree with ``fn`` row by row.
    """

    in_dim: int
    out_dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    batch_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "map"

    def eval(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(self.in_dim)
        y = np.asarray(self.fn(x), dtype=np.float64).reshape(self.out_dim)
        return y

    def eval_many(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64).reshape(-1, self.in_dim)
        if self.batch_fn is not None:
            out = np.asarray(self.batch_fn(xs), dtype=np.float64).reshape(len(xs), self.out_dim)
        else:
            out = np.array([self.eval(x) for x in xs]).reshape(len(xs), self.out_dim)
        if not np.all(np.isfinite(out)):
            raise InvalidInput(f"{self.name} produced non-finite outputs")
        return out


@dataclass(frozen=True)
class InversionProblem:
    map: ForwardMap
    desired_outputs: np.ndarray  # (M, out_dim)
    initial_inputs: np.ndarray  # (M, in_dim)
    max_iterations: int = 100
    residual_target: float = 1e-9
    ridge: float = 0.0
    rank_tolerance: float = DEFAULT_RANK_TOL

    def __post_init__(self):
        y = as_matrix(self.desired_outputs, "desired_outputs")
        x = as_matrix(self.initial_inputs, "initial_inputs")
        object.__setattr__(self, "desired_outputs", y)
        object.__setattr__(self, "initial_inputs", x)
        if y.shape[0] < 2:
            raise InvalidInput("need M >= 2 desired outputs; an affine fit through one point is underdetermined")
        if x.shape[0] != y.shape[0]:
            raise InvalidInput(f"{x.shape[0]} initial inputs for {y.shape[0]} desired outputs")
        if x.shape[1] != self.map.in_dim or y.shape[1] != self.map.out_dim:
            raise InvalidInput("problem dimensions do not match the forward map")
        if self.max_iterations < 0:
            raise InvalidInput("max_iterations must be >= 0")
        if not self.residual_target > 0:
            raise InvalidInput("residual_target must be > 0")


@dataclass(frozen=True)
class InversionState:
    iteration: int
    inputs: np.ndarray
    outputs: np.ndarray
    fit: Optional[AffineFit]  # regressor that produced ``inputs``; None at n = 0
    mean_residual: float
    per_point_residuals: np.ndarray


@dataclass
class InversionTrace:
    states: list = field(default_factory=list)
    converged: bool = False
    total_map_evaluations: int = 0
    desired_outputs: Optional[np.ndarray] = None

    @property
    def final(self) -> InversionState:
        return self.states[-1]

    @property
    def iterations(self) -> int:
        return self.states[-1].iteration if self.states else 0


def make_state(iteration, inputs, outputs, desired, fit=None) -> InversionState:
    mean_res = float(np.linalg.norm(outputs.mean(axis=0) - desired.mean(axis=0)))
    per_point = np.linalg.norm(outputs - desired, axis=1)
    return InversionState(iteration, inputs, outputs, fit, mean_res, per_point)


def initial_state(problem: InversionProblem) -> InversionState:
    x0 = problem.initial_inputs
    return make_state(0, x0, problem.map.eval_many(x0), problem.desired_outputs)


def regress_inverse(state: InversionState, problem: InversionProblem) -> AffineFit:
    """Affine regression from current outputs back to current inputs."""
    fit = affine_least_squares(state.outputs, state.inputs, ridge=problem.ridge,
                               rank_tolerance=problem.rank_tolerance)
    if fit.effective_rank == 0:
        raise DegenerateIteration(
            f"iteration {state.iteration}: outputs have zero variance, nothing to regress", state=state)
    return fit


def iterate_once(state: InversionState, problem: InversionProblem) -> InversionState:
    fit = regress_inverse(state, problem)
    x_next = fit(problem.desired_outputs)
    y_next = problem.map.eval_many(x_next)
    return make_state(state.iteration + 1, x_next, y_next, problem.desired_outputs, fit)


def run(problem: InversionProblem) -> InversionTrace:
    state = initial_state(problem)
    trace = InversionTrace(states=[state], total_map_evaluations=len(state.inputs),
                           desired_outputs=problem.desired_outputs)
    while state.mean_residual > problem.residual_target and state.iteration < problem.max_iterations:
        try:
            state = iterate_once(state, problem)
        except DegenerateIteration as exc:
            exc.trace = trace
            raise
        trace.states.append(state)
        trace.total_map_evaluations += len(state.inputs)
    trace.converged = state.mean_residual <= problem.residual_target
    return trace


def estimate_inverse_jacobian(inputs, outputs, rank_tolerance=DEFAULT_RANK_TOL) -> np.ndarray:
    """Empirical inverse Jacobian ``(F - mean F)^+ (X - mean X)``."""
    x = as_matrix(inputs, "inputs")
    y = as_matrix(outputs, "outputs")
    if x.shape[0] < 2 or x.shape[0] != y.shape[0]:
        raise InvalidInput("need >= 2 matching rows")
    yc = y - y.mean(axis=0)
    if not np.any(yc):
        raise DegenerateIteration("outputs have zero variance")
    return pseudo_inverse(yc, rank_tolerance) @ (x - x.mean(axis=0))


def mean_update(state: InversionState, desired) -> np.ndarray:
    """Predicted next input mean: ``mean X + (mean Y - mean F(X)) @ J_inv``."""
    j_inv = estimate_inverse_jacobian(state.inputs, state.outputs)
    y_bar = np.asarray(desired, dtype=np.float64).mean(axis=0)
    return state.inputs.mean(axis=0) + (y_bar - state.outputs.mean(axis=0)) @ j_inv


def newton_step(x, y_target, jacobian, fx, rank_tolerance=DEFAULT_RANK_TOL) -> np.ndarray:
    """Classical Newton update ``x + (y - F(x)) @ J^-1`` (row convention).

    ``fx`` is the already-evaluated ``F(x)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    j = np.atleast_2d(np.asarray(jacobian, dtype=np.float64))
    if j.shape[0] != j.shape[1]:
        raise SingularJacobian(f"Jacobian must be square, got {j.shape}")
    s = np.linalg.svd(j, compute_uv=False)
    if s[0] == 0 or s[-1] <= rank_tolerance * s[0]:
        raise SingularJacobian("Jacobian is singular at the rank tolerance")
    step = np.linalg.solve(j.T, np.atleast_1d(np.asarray(y_target, dtype=np.float64) - fx))
    return x + step


TRACE_COLUMNS = ("iteration", "mean_residual", "per_point_residual_max",
                 "per_point_residual_mean", "theta_frobenius_norm")


def trace_rows(trace: InversionTrace):
    for s in trace.states:
        theta_norm = "" if s.fit is None else repr(float(np.linalg.norm(s.fit.theta)))
        yield (s.iteration, repr(s.mean_residual), repr(float(s.per_point_residuals.max())),
               repr(float(s.per_point_residuals.mean())), theta_norm)


def write_trace_csv(trace: InversionTrace, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    w.writerows(trace_rows(trace))


def iterations_bound(r0: float, target: float, factor: float) -> int:
    """Iterations needed for a geometric contraction ``factor`` to go from r0 to target."""
    if r0 <= target:
        return 0
    return math.ceil(math.log(target / r0) / math.log(factor))
