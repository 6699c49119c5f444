from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pkm_motion import errors
from pkm_motion.minjerk import (
    CompositeTrajectory,
    DerivativeSpec,
    KinematicLimits,
    assemble_constraints,
    bernstein_basis,
    bernstein_gram,
    bezier_derivative,
    bisect_time_scale,
    endpoint_map,
    forward_diff_matrix,
    free_derivatives,
    optimize_segment_times,
    segment_cost,
    solve_min_jerk,
    time_scale_optimize,
    total_cost,
    trajectory_from_derivatives,
    trajectory_peaks,
)

GL_X, GL_W = np.polynomial.legendre.leggauss(64)
GL_X = 0.5 * (GL_X + 1.0)
GL_W = 0.5 * GL_W


def quintic(t):
    return 10 * t**3 - 15 * t**4 + 6 * t**5


def rest_to_rest_quintic() -> CompositeTrajectory:
    spec = DerivativeSpec.through([0.0, 1.0], 7, end_orders=2)
    return solve_min_jerk(spec, [1.0], r=3, degree=7)


def squared_derivative_integral(traj: CompositeTrajectory, r: int) -> float:
    total = 0.0
    for start, tau in zip(traj.starts, traj.durations):
        t = start + tau * GL_X
        total += tau * np.dot(GL_W, np.sum(traj.evaluate(t, r) ** 2, axis=-1))
    return total


def unit_limits(**overrides) -> KinematicLimits:
    base = dict(v_max=1e9, a_max=1e9, j_max=1e9, vd_max=1e9, ad_max=1e9, jd_max=1e9)
    base.update(overrides)
    return KinematicLimits(**base)


@pytest.fixture(scope="module")
def wavy_spec() -> DerivativeSpec:
    pts = np.array([[0.0, 0.0], [10.0, 4.0], [14.0, 20.0], [30.0, 22.0], [31.0, 40.0], [50.0, 45.0]])
    return DerivativeSpec.through(pts, 7, end_orders=3)


class TestOperators:
    def test_first_difference(self):
        np.testing.assert_array_equal(forward_diff_matrix(2, 1), [[-1, 1, 0], [0, -1, 1]])

    def test_second_difference(self):
        np.testing.assert_array_equal(forward_diff_matrix(3, 2), [[1, -2, 1, 0], [0, 1, -2, 1]])

    def test_order_too_high(self):
        with pytest.raises(errors.OrderTooHigh):
            forward_diff_matrix(3, 4)

    @pytest.mark.parametrize("N,r", [(3, 1), (5, 2), (7, 3), (9, 4)])
    def test_derivative_against_finite_differences(self, N, r):
        ctrl = np.random.default_rng(N + r).normal(size=(N + 1, 2))
        z = np.linspace(0.1, 0.9, 9)
        h = 1e-6
        fd = (bezier_derivative(ctrl, z + h, r - 1, 0.7) - bezier_derivative(ctrl, z - h, r - 1, 0.7)) / (2 * h * 0.7)
        ana = bezier_derivative(ctrl, z, r, 0.7)
        assert np.max(np.abs(fd - ana)) <= 1e-7 * max(1.0, np.max(np.abs(ana)))

    def test_gram_closed_form_small(self):
        assert bernstein_gram(3, 3).tolist() == [[1.0]]
        ref = np.array([[1 / 5, 1 / 10, 1 / 30], [1 / 10, 2 / 15, 1 / 10], [1 / 30, 1 / 10, 1 / 5]])
        np.testing.assert_allclose(bernstein_gram(5, 3), ref, atol=1e-15)

    @pytest.mark.parametrize("N", range(0, 10))
    def test_gram_properties(self, N):
        for r in range(0, min(N, 4) + 1):
            F = bernstein_gram(N, r)
            np.testing.assert_array_equal(F, F.T)
            assert np.min(np.linalg.eigvalsh(F)) >= -1e-15
            assert F.sum() == pytest.approx(1.0, abs=1e-13)


class TestCost:
    def test_linear_segment(self):
        assert segment_cost(np.linspace(0, 3, 8), 0.4, 3) == pytest.approx(0.0, abs=1e-20)

    def test_quintic_cost(self):
        traj = rest_to_rest_quintic()
        assert traj.cost(3) == pytest.approx(720.0, abs=1e-6)

    def test_scaling_law(self):
        ctrl = np.random.default_rng(0).normal(size=(8, 3))
        for r in (2, 3, 4):
            assert segment_cost(ctrl, 2.5, r) == pytest.approx(2.5 ** (1 - 2 * r) * segment_cost(ctrl, 1.0, r), rel=1e-12)

    def test_matches_quadrature(self, wavy_spec):
        traj = solve_min_jerk(wavy_spec, [0.1, 0.3, 0.2, 0.25, 0.15])
        assert traj.cost(3) == pytest.approx(squared_derivative_integral(traj, 3), rel=1e-8)

    def test_non_positive_duration(self):
        with pytest.raises(errors.NonPositiveDuration):
            segment_cost(np.zeros(8), 0.0)


class TestConstraints:
    def test_single_segment_all_fixed(self):
        A = endpoint_map(7, 0.6)
        assert A.shape == (8, 8)
        assert np.linalg.matrix_rank(A) == 8

    def test_block_rank_and_permutation(self, wavy_spec):
        sys = assemble_constraints(wavy_spec, np.full(5, 0.2))
        m, nd = 5, 4
        assert sys.A.shape == (2 * m * nd, m * 8)
        assert np.linalg.matrix_rank(sys.A.toarray()) == 2 * m * nd
        assert sys.selection.shape == (2 * m * nd, (m + 1) * nd)
        M = sys.M.toarray()
        np.testing.assert_array_equal(M @ M.T, np.eye(M.shape[0]))
        assert sys.n_fixed == int(wavy_spec.fixed.sum())

    def test_inconsistent_spec(self, wavy_spec):
        with pytest.raises(errors.InconsistentSpec):
            assemble_constraints(wavy_spec, np.full(5, 0.2), degree=9)
        with pytest.raises(errors.InconsistentSpec):
            solve_min_jerk(wavy_spec, np.full(4, 0.2))
        with pytest.raises(errors.InconsistentSpec):
            DerivativeSpec(np.zeros((3, 4)), np.zeros((3, 4), dtype=bool))


class TestSolve:
    def test_quintic_oracle(self):
        traj = rest_to_rest_quintic()
        t = np.linspace(0, 1, 1001)
        assert np.max(np.abs(traj.evaluate(t)[:, 0] - quintic(t))) <= 1e-9

    def test_passes_waypoints_and_is_smooth(self, wavy_spec):
        traj = solve_min_jerk(wavy_spec, [0.1, 0.3, 0.2, 0.25, 0.15])
        np.testing.assert_allclose(traj.evaluate(traj.breakpoints), wavy_spec.points, atol=1e-9)
        scale = [np.max(np.abs(traj.evaluate(np.linspace(0, 1, 2001), k))) for k in range(4)]
        assert np.all(traj.junction_residuals() <= 1e-8 * np.maximum(1.0, scale))
        for k in (1, 2, 3):
            np.testing.assert_allclose(traj.evaluate([0.0, 1.0], k), 0.0, atol=1e-9)

    def test_symmetric_motion(self):
        spec = DerivativeSpec.through(np.linspace(0, 60, 6), 7, end_orders=3)
        traj = solve_min_jerk(spec, np.full(5, 0.4))
        t = np.linspace(0, 2.0, 401)
        np.testing.assert_allclose(traj.evaluate(t) + traj.evaluate(2.0 - t), 60.0, atol=1e-9)

    def test_perturbation_never_lowers_cost(self, wavy_spec):
        tau = np.array([0.1, 0.3, 0.2, 0.25, 0.15])
        d = free_derivatives(wavy_spec, tau)
        best = trajectory_from_derivatives(d, tau).cost()
        assert best == pytest.approx(total_cost(wavy_spec, tau), rel=1e-9)
        free = np.argwhere(~wavy_spec.fixed)
        for (i, k), dim, sign in itertools.product(free, range(2), (-1, 1)):
            e = d.copy()
            e[i, k, dim] += sign * 1e-3 * max(1.0, abs(d[i, k, dim]))
            assert trajectory_from_derivatives(e, tau).cost() >= best

    def test_random_competitors(self, wavy_spec, rng):
        tau = np.array([0.1, 0.3, 0.2, 0.25, 0.15])
        d = free_derivatives(wavy_spec, tau)
        best = total_cost(wavy_spec, tau)
        for _ in range(50):
            e = d + np.where(~wavy_spec.fixed[:, :, None], rng.normal(size=d.shape) * np.abs(d).max(), 0.0)
            assert trajectory_from_derivatives(e, tau).cost() >= best

    def test_time_scale_invariance(self, wavy_spec):
        tau = np.array([0.1, 0.3, 0.2, 0.25, 0.15])
        a = solve_min_jerk(wavy_spec, tau)
        b = solve_min_jerk(wavy_spec, 3 * tau)
        assert np.max(np.abs(a.control_points - b.control_points)) <= 1e-9

    def test_degree_nine_minimum_snap(self):
        spec = DerivativeSpec.through(np.array([0.0, 3.0, 4.0, 9.0]), 9, end_orders=4)
        traj = solve_min_jerk(spec, [0.3, 0.3, 0.4], r=4, degree=9)
        np.testing.assert_allclose(traj.evaluate(traj.breakpoints)[:, 0], [0, 3, 4, 9], atol=1e-9)
        assert traj.cost(4) == pytest.approx(squared_derivative_integral(traj, 4), rel=1e-8)

    def test_degree_too_low(self):
        spec = DerivativeSpec.through([0.0, 1.0], 3)
        with pytest.raises(errors.InconsistentSpec):
            solve_min_jerk(spec, [1.0], r=3, degree=3)

    def test_out_of_range_time(self):
        with pytest.raises(errors.TimeOutOfRange):
            rest_to_rest_quintic().evaluate(1.5)


class TestSegmentTimes:
    def test_single_segment(self):
        res = optimize_segment_times(DerivativeSpec.through([0.0, 5.0], 7, end_orders=3))
        np.testing.assert_array_equal(res.tau, [1.0])

    @pytest.mark.parametrize("method", ["bfgs", "lbfgs", "nelder-mead"])
    def test_mirror_symmetric(self, method):
        spec = DerivativeSpec.through([0.0, 10.0, 20.0], 7, end_orders=3)
        res = optimize_segment_times(spec, method=method)
        np.testing.assert_allclose(res.tau, [0.5, 0.5], atol=1e-4)

    def test_grid_search_oracle(self):
        spec = DerivativeSpec.through(np.array([[0.0, 0.0], [4.0, 1.0], [20.0, 3.0], [22.0, 15.0]]), 7, end_orders=3)
        res = optimize_segment_times(spec)
        assert res.cost <= res.uniform_cost
        grid = np.linspace(0.0, 1.0, 51)[1:-1]
        best = min(
            total_cost(spec, [a, b, 1 - a - b]) for a in grid for b in grid if 1 - a - b > 1e-3
        )
        assert res.cost <= best * 1.01
        assert res.tau.sum() == pytest.approx(1.0, abs=1e-12)

    def test_floor_respected(self, wavy_spec):
        res = optimize_segment_times(wavy_spec, tau_floor=0.05)
        assert np.all(res.tau >= 0.05 - 1e-12)


@pytest.fixture(scope="module")
def unit():
    spec = DerivativeSpec.through(np.array([0.0, 12.0, 15.0, 40.0]), 7, end_orders=3)
    return solve_min_jerk(spec, [0.3, 0.2, 0.5])


class TestTimeScaling:
    def test_velocity_binding(self, unit):
        peaks = trajectory_peaks(unit)
        res = time_scale_optimize(unit, unit_limits(v_max=peaks[0] / 2))
        assert res.k == pytest.approx(2.0, abs=1e-6)
        assert res.binding == "tangential_v"
        assert res.trajectory.total_time == pytest.approx(2.0, abs=1e-6)

    def test_jerk_binding(self, unit):
        peaks = trajectory_peaks(unit)
        res = time_scale_optimize(unit, unit_limits(j_max=peaks[2] / 8))
        assert res.k == pytest.approx(2.0, abs=1e-6)
        assert res.binding == "tangential_j"

    def test_joint_map_binding(self, unit):
        # a linear joint map q = 3 s scales every derivative by 3
        jmap = lambda t: 3.0 * np.stack([unit.evaluate(t, k) for k in (1, 2, 3)], axis=1)
        peaks = trajectory_peaks(unit)
        res = time_scale_optimize(unit, unit_limits(vd_max=peaks[0]), jmap)
        assert res.binding == "joint_v"
        assert res.k == pytest.approx(3.0, rel=1e-6)

    def test_hull_bounds_are_conservative(self, unit):
        res = time_scale_optimize(unit, unit_limits())
        for name, bound in res.hull_bounds.items():
            assert bound >= res.peaks[name] * (1 - 1e-12)

    def test_infeasible_limits(self):
        with pytest.raises(errors.InfeasibleLimits):
            KinematicLimits(1.0, -1.0, 1.0, 1.0, 1.0, 1.0)

    def test_mixed_binding_dense_check(self, unit):
        limits = KinematicLimits(50.0, 400.0, 9000.0, 1e9, 1e9, 1e9)
        res = time_scale_optimize(unit, limits)
        assert bisect_time_scale(res.peaks, limits) == pytest.approx(res.k, rel=1e-6)
        scaled = res.trajectory
        t = np.linspace(0, scaled.total_time, 200_001)
        worst = {}
        for k, lim in zip((1, 2, 3), limits.tangential()):
            worst[k] = np.max(np.abs(scaled.evaluate(t, k))) / lim
            assert worst[k] <= 1 + 1e-9
        assert max(worst.values()) >= 0.99


@given(st.lists(st.floats(0.5, 30.0), min_size=2, max_size=5), st.floats(0.2, 5.0))
def test_control_points_independent_of_time_scale(steps, c):
    pts = np.concatenate([[0.0], np.cumsum(steps)])
    spec = DerivativeSpec.through(pts, 7, end_orders=3)
    tau = np.linspace(1.0, 2.0, len(steps))
    a = solve_min_jerk(spec, tau)
    b = solve_min_jerk(spec, c * tau)
    assert np.max(np.abs(a.control_points - b.control_points)) <= 1e-9 * max(1.0, pts[-1])


@given(st.integers(1, 9), st.integers(0, 4))
def test_gram_matches_quadrature(N, r):
    if r > N:
        return
    m = N - r
    B = bernstein_basis(m, GL_X)
    ref = B.T @ (GL_W[:, None] * B)
    assert np.max(np.abs(bernstein_gram(N, r) - ref)) <= 1e-12
    assert math.isclose(bernstein_gram(N, r).sum(), 1.0, abs_tol=1e-12)
