import io

import numpy as np
import pytest

from iterinv.errors import DegenerateIteration, InvalidInput, SingularJacobian
from iterinv.inversion import (TRACE_COLUMNS, ForwardMap, InversionProblem, estimate_inverse_jacobian,
                               initial_state, iterate_once, iterations_bound, mean_update, newton_step, run,
                               write_trace_csv)
from iterinv.maps import (four_x_plus_sin, jacobian_sin_linear, linear_map, random_well_conditioned, scalar_map,
                          sin_linear_map)
from iterinv.theory import eq4_max_error, finite_difference_jacobians


class TestForwardMap:
    def test_batch_and_pointwise_agree(self, np_rng):
        a = np_rng.normal(size=(3, 3))
        fmap = sin_linear_map(a, amplitude=0.3)
        xs = np_rng.normal(size=(6, 3))
        np.testing.assert_allclose(fmap.eval_many(xs), np.array([fmap.eval(x) for x in xs]), atol=1e-14)

    def test_linear_map_is_column_convention(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        fmap = linear_map(a, [1.0, 0.0])
        np.testing.assert_allclose(fmap.eval([1.0, 1.0]), [4.0, 7.0])

    def test_non_finite_output_rejected(self):
        fmap = scalar_map(lambda x: np.where(x > 0, x, np.nan))
        with pytest.raises(InvalidInput):
            fmap.eval_many([[-1.0], [1.0]])

    def test_analytic_jacobian_matches_finite_differences(self, np_rng):
        a = np_rng.normal(size=(2, 2))
        xs = np_rng.normal(size=(4, 2))
        fmap = sin_linear_map(a, amplitude=0.2, frequency=1.5)
        np.testing.assert_allclose(jacobian_sin_linear(a, 0.2, 1.5, xs), finite_difference_jacobians(fmap, xs),
                                   atol=1e-7)


class TestProblemValidation:
    def test_needs_two_points(self):
        with pytest.raises(InvalidInput):
            InversionProblem(four_x_plus_sin(), [[1.0]], [[0.0]])

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInput):
            InversionProblem(four_x_plus_sin(), [[1.0], [2.0]], [[0.0], [1.0], [2.0]])
        with pytest.raises(InvalidInput):
            InversionProblem(four_x_plus_sin(), [[1.0, 1.0], [2.0, 2.0]], [[0.0], [1.0]])

    def test_bad_settings(self):
        with pytest.raises(InvalidInput):
            InversionProblem(four_x_plus_sin(), [[1.0], [2.0]], [[0.0], [1.0]], max_iterations=-1)
        with pytest.raises(InvalidInput):
            InversionProblem(four_x_plus_sin(), [[1.0], [2.0]], [[0.0], [1.0]], residual_target=0.0)


class TestRun:
    def test_linear_map_one_iteration(self, rng):
        a = random_well_conditioned(3, rng)
        fmap = linear_map(a, rng.normal(3))
        y = 5 * rng.normal((6, 3))
        trace = run(InversionProblem(fmap, y, rng.normal((6, 3))))
        assert trace.converged
        assert trace.iterations == 1
        # every point, not just the mean, is solved exactly
        np.testing.assert_allclose(trace.final.outputs, y, atol=1e-9)

    def test_scalar_example_converges(self):
        trace = run(InversionProblem(four_x_plus_sin(), [[3.0], [-7.0]], [[0.0], [1.0]], max_iterations=40,
                                     residual_target=1e-10))
        assert trace.converged
        np.testing.assert_allclose(4 * trace.final.inputs + np.sin(trace.final.inputs), [[3.0], [-7.0]], atol=1e-9)

    def test_max_iterations_zero_reports_not_converged(self):
        trace = run(InversionProblem(four_x_plus_sin(), [[3.0], [-7.0]], [[0.0], [1.0]], max_iterations=0))
        assert not trace.converged
        assert trace.iterations == 0
        assert trace.total_map_evaluations == 2

    def test_already_converged_stops_at_zero(self):
        x0 = np.array([[0.5], [1.5]])
        y = 4 * x0 + np.sin(x0)
        trace = run(InversionProblem(four_x_plus_sin(), y, x0))
        assert trace.converged and trace.iterations == 0

    def test_identical_initial_inputs_are_degenerate(self):
        problem = InversionProblem(four_x_plus_sin(), [[3.0], [-7.0]], [[1.0], [1.0]])
        with pytest.raises(DegenerateIteration) as info:
            run(problem)
        assert info.value.trace is not None
        assert info.value.trace.iterations == 0

    def test_constant_map_is_degenerate(self):
        fmap = scalar_map(lambda x: 0.0 * x + 2.0, name="const")
        with pytest.raises(DegenerateIteration):
            run(InversionProblem(fmap, [[5.0], [7.0]], [[0.0], [1.0]]))

    def test_state_records_fit_that_produced_it(self):
        problem = InversionProblem(four_x_plus_sin(), [[3.0], [-7.0]], [[0.0], [1.0]])
        s0 = initial_state(problem)
        s1 = iterate_once(s0, problem)
        assert s0.fit is None
        np.testing.assert_allclose(s1.fit(problem.desired_outputs), s1.inputs)

    def test_evaluation_count(self):
        trace = run(InversionProblem(four_x_plus_sin(), [[3.0], [-7.0], [1.0]], [[0.0], [1.0], [2.0]],
                                     max_iterations=5, residual_target=1e-300))
        assert trace.total_map_evaluations == 3 * (trace.iterations + 1)


class TestMeanUpdate:
    def test_matches_regression_mean_on_nonlinear_map(self, rng):
        a = random_well_conditioned(2, rng)
        fmap = sin_linear_map(a, amplitude=0.5)
        y = rng.normal((5, 2))
        trace = run(InversionProblem(fmap, y, rng.normal((5, 2)), max_iterations=10, residual_target=1e-300))
        assert eq4_max_error(trace, y) <= 1e-9

    def test_equals_newton_for_linear_maps(self, rng):
        a = random_well_conditioned(3, rng)
        h = rng.normal(3)
        fmap = linear_map(a, h)
        y = rng.normal((5, 3))
        x0 = rng.normal((5, 3))
        state = initial_state(InversionProblem(fmap, y, x0))
        x_bar = x0.mean(axis=0)
        expected = newton_step(x_bar, y.mean(axis=0), a.T, fmap.eval(x_bar))
        np.testing.assert_allclose(mean_update(state, y), expected, atol=1e-9)

    def test_inverse_jacobian_of_linear_map(self, rng):
        a = random_well_conditioned(2, rng)
        x = rng.normal((6, 2))
        j_inv = estimate_inverse_jacobian(x, linear_map(a).eval_many(x))
        np.testing.assert_allclose(j_inv, np.linalg.inv(a.T), atol=1e-10)

    def test_inverse_jacobian_rejects_constant_outputs(self):
        with pytest.raises(DegenerateIteration):
            estimate_inverse_jacobian([[0.0], [1.0]], [[2.0], [2.0]])


class TestNewtonStep:
    def test_solves_linear_in_one_step(self):
        a = np.array([[2.0, 1.0], [0.0, 3.0]])
        fmap = linear_map(a)
        x = np.array([1.0, -1.0])
        target = np.array([4.0, 5.0])
        x1 = newton_step(x, target, a.T, fmap.eval(x))
        np.testing.assert_allclose(fmap.eval(x1), target, atol=1e-12)

    def test_singular_and_nonsquare(self):
        with pytest.raises(SingularJacobian):
            newton_step([0.0, 0.0], [1.0, 1.0], np.ones((2, 2)), np.zeros(2))
        with pytest.raises(SingularJacobian):
            newton_step([0.0], [1.0], np.ones((1, 2)), np.zeros(2))


class TestTraceCsv:
    def test_columns_and_rows(self):
        trace = run(InversionProblem(four_x_plus_sin(), [[3.0], [-7.0]], [[0.0], [1.0]], max_iterations=3,
                                     residual_target=1e-300))
        buf = io.StringIO()
        write_trace_csv(trace, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0].split(",") == list(TRACE_COLUMNS)
        assert len(lines) == 1 + len(trace.states)
        assert lines[1].endswith(",")  # no regressor at iteration 0
        assert float(lines[2].split(",")[1]) == trace.states[1].mean_residual


def test_iterations_bound():
    assert iterations_bound(1.0, 2.0, 0.5) == 0
    assert iterations_bound(1.0, 1e-3, 0.5) == 10
    assert 0.5 ** iterations_bound(8.0, 1e-6, 0.5) * 8.0 <= 1e-6


def test_forward_map_is_frozen():
    fmap = ForwardMap(1, 1, fn=lambda x: x)
    with pytest.raises(AttributeError):
        fmap.name = "other"
