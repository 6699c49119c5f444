from __future__ import annotations

import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pkm_motion import errors
from pkm_motion import kinematics as kin
from pkm_motion.cli import kinematics_report

HOME_D = 780.0 - math.sqrt(278_000.0)


def random_poses(geom, rng, n):
    return geom.home_pose + np.column_stack([rng.uniform(-100, 100, (n, 3)), np.radians(rng.uniform(-30, 30, n))])


def cubic_motion(rng, n):
    return np.stack([
        rng.normal(size=(n, 4)) * [10, 10, 10, 0.1],
        rng.normal(size=(n, 4)) * [50, 50, 50, 0.5],
        rng.normal(size=(n, 4)) * [200, 200, 200, 2.0],
    ])


class TestInverse:
    def test_home_closed_form(self, geometry):
        d = kin.inverse_position(geometry, geometry.home_pose)
        np.testing.assert_allclose(d, HOME_D, rtol=0, atol=1e-12)
        np.testing.assert_allclose(geometry.home_displacement, d, atol=1e-12)

    def test_limb_lengths_preserved(self, geometry, rng):
        poses = random_poses(geometry, rng, 200)
        L = kin.limb_vectors(geometry, poses)
        np.testing.assert_allclose(np.linalg.norm(L, axis=-1), 600.0, rtol=1e-13)

    def test_pure_x_translation_shifts_every_joint(self, geometry):
        # every rail runs along x, so moving the platform along x slides all joints equally
        shift = np.array([37.5, 0, 0, 0])
        d0 = kin.inverse_position(geometry, geometry.home_pose)
        d1 = kin.inverse_position(geometry, geometry.home_pose + shift)
        np.testing.assert_allclose(d1 - d0, 37.5, atol=1e-12)

    def test_unreachable(self, geometry):
        with pytest.raises(errors.Unreachable) as info:
            kin.inverse_position(geometry, [0.0, 0.0, 700.0, 0.0])
        assert info.value.limb is not None

    def test_batch_shape(self, geometry, rng):
        poses = random_poses(geometry, rng, 12).reshape(3, 4, 4)
        assert kin.inverse_position(geometry, poses).shape == (3, 4, 4)


class TestForward:
    def test_round_trip(self, geometry, rng):
        poses = random_poses(geometry, rng, 100)
        for p, d in zip(poses, kin.inverse_position(geometry, poses)):
            q = kin.forward_position(geometry, d, geometry.home_pose)
            assert np.linalg.norm(q[:3] - p[:3]) <= 1e-9
            assert abs(q[3] - p[3]) <= 1e-9

    def test_no_convergence(self, geometry):
        with pytest.raises(errors.NoConvergence):
            kin.forward_position(geometry, np.array([5000.0, -5000.0, 5000.0, -5000.0]), max_iter=3)


class TestJacobians:
    def test_velocity_relation(self, geometry, rng):
        # J_p dP = J_d dd, checked against a central difference of the IK
        poses = random_poses(geometry, rng, 50)
        v = rng.normal(size=(50, 4)) * [10, 10, 10, 0.1]
        h = 1e-5
        dd = (kin.inverse_position(geometry, poses + h * v) - kin.inverse_position(geometry, poses - h * v)) / (2 * h)
        Jp, Jd = kin.jacobians(geometry, poses)
        lhs = np.einsum("nab,nb->na", Jp, v)
        rhs = np.einsum("nab,nb->na", Jd, dd)
        assert np.max(np.abs(lhs - rhs)) <= 1e-6 * np.max(np.abs(lhs))

    def test_singular_warning(self, geometry):
        # a pose whose rods lie perpendicular to their rails makes J_d singular
        home = geometry.home_pose.copy()
        d = kin.inverse_position(geometry, home)
        with warnings.catch_warnings():
            warnings.simplefilter("error", errors.SingularJacobian)
            kin.jacobians(geometry, home, d)
        with pytest.warns(errors.SingularJacobian):
            kin.jacobians(geometry, home, d + (800 - d - 20))

    def test_derivative_recursions_are_mutual_inverses(self, geometry, rng):
        poses = random_poses(geometry, rng, 100)
        Pd = cubic_motion(rng, 100)
        jac = kin.jacobian_derivatives(geometry, poses, Pd, order=2)
        dd = kin.joint_derivatives(geometry, poses, Pd, 3, jac)
        back = kin.pose_derivatives(geometry, poses, dd, jac)
        assert np.max(np.abs(back - Pd) / (np.abs(Pd) + 1.0)) <= 1e-8

    def test_joint_derivatives_against_finite_differences(self, geometry, rng):
        n = 40
        poses = random_poses(geometry, rng, n)
        Pd = cubic_motion(rng, n)
        dd = kin.joint_derivatives(geometry, poses, Pd, 3)
        h = 1e-3
        steps = np.arange(-3, 4) * h
        for i in range(n):
            traj = poses[i] + np.outer(steps, Pd[0, i]) + np.outer(steps**2 / 2, Pd[1, i]) + np.outer(steps**3 / 6, Pd[2, i])
            q = kin.inverse_position(geometry, traj)
            vel = (q[1] - 8 * q[2] + 8 * q[4] - q[5]) / (12 * h)
            acc = (-q[1] + 16 * q[2] - 30 * q[3] + 16 * q[4] - q[5]) / (12 * h**2)
            jerk = (q[0] - 8 * q[1] + 13 * q[2] - 13 * q[4] + 8 * q[5] - q[6]) / (8 * h**3)
            for fd, ana in ((vel, dd[0, i]), (acc, dd[1, i]), (jerk, dd[2, i])):
                assert np.max(np.abs(fd - ana) / np.maximum(np.abs(ana), 1.0)) <= 1e-3

    def test_static_pose_has_zero_joint_rates(self, geometry, rng):
        poses = random_poses(geometry, rng, 5)
        dd = kin.joint_derivatives(geometry, poses, np.zeros((3, 5, 4)), 3)
        np.testing.assert_array_equal(dd, 0.0)


class TestGeometryFile:
    def test_dict_round_trip(self, geometry, tmp_path):
        path = tmp_path / "geom.json"
        path.write_text(json.dumps(geometry.to_dict()))
        back = kin.load_geometry(path)
        for name in ("base", "directions", "lengths", "offsets", "platform", "branches", "home_pose"):
            np.testing.assert_array_equal(getattr(back, name), getattr(geometry, name))

    def test_bad_json_reports_line(self, tmp_path):
        path = tmp_path / "geom.json"
        path.write_text('{\n  "limbs": [\n   oops\n]}')
        with pytest.raises(errors.ConfigError) as info:
            kin.load_geometry(path)
        assert info.value.line == 3

    def test_missing_key(self, geometry):
        data = geometry.to_dict()
        del data["limbs"][2]["length_mm"]
        with pytest.raises(errors.ConfigError, match="length_mm"):
            kin.RobotGeometry.from_dict(data)

    def test_non_unit_direction(self, geometry):
        data = geometry.to_dict()
        data["limbs"][0]["rail_direction"] = [2.0, 0.0, 0.0]
        with pytest.raises(errors.ConfigError, match="unit"):
            kin.RobotGeometry.from_dict(data)

    def test_wrong_limb_count(self, geometry):
        data = geometry.to_dict()
        data["limbs"] = data["limbs"][:3]
        with pytest.raises(errors.ConfigError):
            kin.RobotGeometry.from_dict(data)


def test_report_passes_on_default_geometry(geometry):
    report = kinematics_report(geometry, 30, np.random.default_rng(1))
    assert report["passed"]
    assert report["min_abs_det_jp"] > 0


@given(
    st.floats(-100, 100), st.floats(-100, 100), st.floats(-100, 100), st.floats(-30, 30),
)
def test_round_trip_property(x, y, z, alpha):
    geom = kin.default_geometry()
    pose = np.array([x, y, z, math.radians(alpha)])
    d = kin.inverse_position(geom, pose)
    q = kin.forward_position(geom, d, geom.home_pose)
    assert np.linalg.norm(q[:3] - pose[:3]) <= 1e-9
    assert abs(q[3] - pose[3]) <= 1e-9
    np.testing.assert_allclose(np.linalg.norm(kin.limb_vectors(geom, pose, d), axis=-1), geom.lengths, rtol=1e-13)
