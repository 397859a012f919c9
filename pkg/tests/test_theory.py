import io
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iterinv.errors import NotMonotone, PreconditionFailed
from iterinv.inversion import InversionProblem
from iterinv.maps import four_x_plus_sin, linear_map, scalar_map, sin_linear_map
from iterinv.numkit import RngStream
from iterinv.theory import (CERTIFICATE_COLUMNS, AssumptionBounds, SlopeStats, certify_linear_oneshot,
                            certify_mean_contraction, certify_multidim_ball, certify_theta_bounds,
                            certify_two_point_contraction, estimate_assumption_bounds, estimate_slopes,
                            inverse_by_bisection, run_suite, with_epsilon, write_certificates_csv)


@pytest.fixture(scope="module")
def sin_stats():
    return estimate_slopes(four_x_plus_sin(), -30.0, 30.0)


class TestSlopes:
    def test_four_x_plus_sin_slopes_lie_in_3_5(self, sin_stats):
        # derivative 4 + cos x spans [3, 5]; secants are averages of it
        assert 3.0 <= sin_stats.s_min < 3.001
        assert 4.999 < sin_stats.s_max <= 5.0
        assert sin_stats.epsilon == pytest.approx(2 - sin_stats.s_max / sin_stats.s_min)
        assert sin_stats.epsilon == pytest.approx(1 / 3, abs=1e-3)
        assert sin_stats.monotone_increasing

    def test_linear_map_has_ratio_one(self):
        stats = estimate_slopes(scalar_map(lambda x: 2.5 * x - 1), -1, 1, grid=11)
        assert stats.slope_ratio == pytest.approx(1.0)
        assert stats.epsilon == pytest.approx(1.0)

    def test_decreasing_map(self):
        stats = estimate_slopes(scalar_map(lambda x: -3 * x - 0.5 * np.sin(x)), -5, 5)
        assert not stats.monotone_increasing
        lo, hi = stats.theta_interval()
        assert lo < hi < 0

    def test_non_monotone_raises(self):
        with pytest.raises(NotMonotone):
            estimate_slopes(scalar_map(lambda x: x ** 2), -1, 1, grid=11)

    def test_ratio_above_two_has_no_epsilon(self):
        stats = estimate_slopes(scalar_map(lambda x: x ** 3 + x), 0, 2, grid=51)
        assert stats.slope_ratio > 2
        assert stats.epsilon is None and stats.contraction is None

    def test_bad_domain(self):
        with pytest.raises(ValueError):
            estimate_slopes(four_x_plus_sin(), 1, 1)
        with pytest.raises(ValueError):
            estimate_slopes(four_x_plus_sin(), 0, 1, grid=2)


class TestBisection:
    @settings(max_examples=30, deadline=None)
    @given(st.floats(-100, 100))
    def test_inverts(self, y):
        fmap = four_x_plus_sin()
        x = inverse_by_bisection(fmap, y, -1, 1)
        assert abs(fmap.eval(x)[0] - y) < 1e-9


class TestAssumptionBounds:
    def test_closed_form(self):
        b = AssumptionBounds.from_constants(gamma=0.1, zeta=2.0, beta=0.5, lam=0.01, delta=0.2)
        mu = 2.0 ** 2 * 0.5 * 0.2 / (1 - 2.0 * 0.5 * 0.2)
        rho = 2 * 0.01 * 0.5 * 1.2 * (mu + 2.0) / (1 - 0.5 * 1.2 * (mu + 0.1))
        assert b.mu == pytest.approx(mu)
        assert b.rho == pytest.approx(rho)
        assert b.contraction == pytest.approx(0.5 * 1.2 * (0.1 + mu))

    def test_infeasible_constants_give_infinite_radius(self):
        b = AssumptionBounds.from_constants(gamma=5.0, zeta=1.0, beta=1.0, lam=0.1, delta=0.0)
        assert b.rho == float("inf")

    def test_exact_linear_map(self):
        a = np.diag([3.0, 4.0])
        b = estimate_assumption_bounds(linear_map(a), [-1, -1], [1, 1], grid=5)
        assert b.gamma == pytest.approx(0.0, abs=1e-6)
        assert b.zeta == pytest.approx(4.0)
        assert b.beta == pytest.approx(1 / 3)
        assert b.lam == pytest.approx(0.0, abs=1e-12)
        assert b.rho == pytest.approx(0.0, abs=1e-5)

    def test_single_sample_warns(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            b = estimate_assumption_bounds(sin_linear_map(np.diag([3.0, 4.0])), [0, 0], [1, 1], grid=1)
        assert b.single_sample and b.gamma == 0.0
        assert any(issubclass(w.category, RuntimeWarning) for w in caught)


class TestCertificates:
    def test_linear_oneshot(self):
        cert = certify_linear_oneshot(3, 20, RngStream(0))
        assert cert.holds and cert.worst_observed <= 1e-8

    def test_two_point_contraction_and_theta(self, sin_stats):
        cert = certify_two_point_contraction(four_x_plus_sin(), sin_stats, [5.0, -12.0], [0.0, 3.0], 40)
        assert cert.holds
        assert cert.trace.converged
        assert certify_theta_bounds(cert.trace, sin_stats).holds

    def test_two_point_needs_distinct_points(self, sin_stats):
        with pytest.raises(PreconditionFailed):
            certify_two_point_contraction(four_x_plus_sin(), sin_stats, [1.0, 2.0], [0.5, 0.5], 10)

    def test_negative_control(self, sin_stats):
        cert = certify_two_point_contraction(four_x_plus_sin(), with_epsilon(sin_stats, 0.9), [5.0, -12.0],
                                             [0.0, 3.0], 40)
        assert not cert.holds

    def test_theta_violation_detected(self, sin_stats):
        cert = certify_two_point_contraction(four_x_plus_sin(), sin_stats, [5.0, -12.0], [0.0, 3.0], 40)
        narrow = SlopeStats(4.5, 4.6, 4.6 / 4.5, 2 - 4.6 / 4.5, True)
        assert not certify_theta_bounds(cert.trace, narrow).holds

    def test_mean_contraction(self, sin_stats):
        fmap = four_x_plus_sin()
        y = np.array([1.0, 2.0, -3.0, 4.0, 0.5])
        x_star = inverse_by_bisection(fmap, y.mean(), -5, 5)
        cert = certify_mean_contraction(fmap, sin_stats, y, x_star + np.array([1, 2, 3, 4, 5.0]), 40)
        assert cert.holds and cert.details["checked"] >= 1

    def test_mean_contraction_rejects_straddling_start(self, sin_stats):
        with pytest.raises(PreconditionFailed):
            certify_mean_contraction(four_x_plus_sin(), sin_stats, [0.0, 0.0], [-1.0, 1.0], 10)

    def test_ball_rejects_infeasible_bounds(self):
        bounds = AssumptionBounds.from_constants(gamma=5.0, zeta=1.0, beta=1.0, lam=0.1, delta=0.0)
        fmap = sin_linear_map(np.eye(2))
        problem = InversionProblem(fmap, np.ones((3, 2)), np.eye(3, 2))
        with pytest.raises(PreconditionFailed):
            certify_multidim_ball(fmap, bounds, problem)


class TestSuite:
    def test_small_suite_holds(self):
        certs = run_suite(seed=3, dims=(2,), trials=10, instances=10)
        assert {c.certificate_id for c in certs} == {"T1", "T2", "T3", "T4", "L1"}
        assert all(c.holds for c in certs)

    def test_deterministic(self):
        a = run_suite(("T3",), seed=1, instances=5)
        b = run_suite(("T3",), seed=1, instances=5)
        assert a[0].worst_observed == b[0].worst_observed

    def test_unknown_id(self):
        with pytest.raises(ValueError):
            run_suite(("T9",))

    def test_csv(self):
        buf = io.StringIO()
        write_certificates_csv(run_suite(("T1",), dims=(1,), trials=3), buf)
        lines = buf.getvalue().splitlines()
        assert lines[0].split(",") == list(CERTIFICATE_COLUMNS)
        assert lines[1].startswith("T1,true,")
