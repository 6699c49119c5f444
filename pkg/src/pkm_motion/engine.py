"""Dual-stage planning pipeline, runtime lookup table and interpolator baselines.

The offline stage fits the geometric path, reparameterizes it by arc
length, plans a jerk-minimal, time-scaled path-length trajectory ``s(t)``,
samples it at the offline tick and fits one degree-7 Hermite segment per
sample interval in joint space. The runtime stage only locates the active
segment of that table and evaluates its polynomial.
"""

from __future__ import annotations

import bisect
import contextlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import kinematics as kin
from .arclength import POLY_DEGREE, ModifierPolySet, fit_modifier_polynomials
from .bspline import ArcLengthTable, BSplineCurve, arc_length_at, arc_length_table, fit_interpolating_spline, param_at_length
from .errors import InvalidPath, LengthMismatch, ParamOverrun, PkmMotionError, TimeOutOfRange, tag_stage
from .minjerk import (
    CompositeTrajectory,
    DerivativeSpec,
    KinematicLimits,
    SegmentTimeResult,
    TimeScaleResult,
    bernstein_basis,
    falling,
    optimize_segment_times,
    solve_min_jerk,
    time_scale_optimize,
    trajectory_from_derivatives,
    trajectory_peaks,
)
from .quaternion import QuatSpline, euler_to_quat, eval_orientation, fit_orientation_spline
from .sync import PiecewiseBezier, eval_w_of_s, fit_w_of_s
from .waypoints import WaypointSet

_X_ONLY_TOL_DEG = 1e-9


@dataclass(frozen=True)
class PlanConfig:
    """Numerical settings of the pipeline.

    Attributes:
        position_degree: degree of the position B-spline.
        orientation_degree: degree of the log-quaternion B-spline.
        trajectory_degree: Bezier degree of the time trajectories.
        cost_order: derivative order minimized in time (3 = jerk).
        quadrature_tol: adaptive Simpson tolerance for arc length (mm).
        mse_tol: mean-squared-error bound of each modifier polynomial.
        qp_tol: relative tolerance of the synchronization QP.
        dt_offline: offline sampling tick (s).
        dt_runtime: runtime interrupt period (s).
        segment_time_method: ``"bfgs"``, ``"lbfgs"`` or ``"nelder-mead"``.
        tangential_samples: samples per segment for tangential peak search.
        joint_samples: samples per segment for joint peak search.
        compare_feed: commanded feed for interpolator comparisons (mm/s).
    """

    position_degree: int = 5
    orientation_degree: int = 5
    trajectory_degree: int = 7
    cost_order: int = 3
    quadrature_tol: float = 1e-8
    mse_tol: float = 1e-10
    qp_tol: float = 1e-10
    dt_offline: float = 0.010
    dt_runtime: float = 65e-6
    segment_time_method: str = "bfgs"
    tangential_samples: int = 10_000
    joint_samples: int = 256
    compare_feed: float = 80.0


DEFAULT_LIMITS = KinematicLimits(v_max=100.0, a_max=1000.0, j_max=20_000.0, vd_max=150.0, ad_max=1500.0, jd_max=30_000.0)


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except PkmMotionError as exc:
        raise tag_stage(exc, name)


class JointLUT:
    """Per-segment Bezier coefficients of the joint trajectories.

    Segment ``i`` covers ``[starts[i], starts[i] + durations[i]]``. Lookup
    is a binary search over segment start times followed by evaluation of
    that single segment; :meth:`segment` is the only accessor of the
    coefficient tables and counts its calls.
    """

    def __init__(self, starts: ArrayLike, durations: ArrayLike, control_points: ArrayLike):
        self.starts = np.array(starts, dtype=float)
        self.durations = np.array(durations, dtype=float)
        self.control_points = np.array(control_points, dtype=float)
        m, n1, _ = self.control_points.shape
        if self.starts.shape != (m,) or self.durations.shape != (m,):
            raise LengthMismatch("one start time and duration per segment are required")
        self.degree = n1 - 1
        self.end_time = float(self.starts[-1] + self.durations[-1])
        self._starts_list = self.starts.tolist()
        self._diff = [falling(self.degree, k) * np.diff(self.control_points, n=k, axis=1) for k in range(4)]
        for arr in (self.starts, self.durations, self.control_points, *self._diff):
            arr.setflags(write=False)
        self.access_count = 0

    @classmethod
    def from_trajectory(cls, traj: CompositeTrajectory) -> JointLUT:
        return cls(traj.starts, traj.durations, traj.control_points)

    def __len__(self) -> int:
        return self.starts.size

    @property
    def n_joints(self) -> int:
        return self.control_points.shape[2]

    def locate(self, t: float) -> int:
        i = bisect.bisect_right(self._starts_list, t) - 1
        return min(max(i, 0), len(self) - 1)

    def segment(self, i: int) -> tuple[float, float, list[NDArray[np.float64]]]:
        self.access_count += 1
        return float(self.starts[i]), float(self.durations[i]), [d[i] for d in self._diff]

    def evaluate(self, t: float, order: int = 3) -> NDArray[np.float64]:
        """``(order + 1, joints)`` values and time derivatives at ``t``."""
        if not (0.0 <= t <= self.end_time):
            raise TimeOutOfRange(f"t={t} outside [0, {self.end_time}]")
        start, tau, tables = self.segment(self.locate(t))
        zeta = min(max((t - start) / tau, 0.0), 1.0)
        out = np.empty((order + 1, self.n_joints))
        for k in range(order + 1):
            basis = bernstein_basis(self.degree - k, zeta)[0]
            out[k] = basis @ tables[k] / tau**k
        return out


@dataclass(frozen=True, eq=False)
class MotionSample:
    """Runtime output at one instant.

    Attributes:
        t: time (s).
        pose: ``[x, y, z, alpha]`` from the task chain (mm, rad).
        pose_derivs: ``(3, 4)`` first to third pose time derivatives.
        joints: joint displacements from the lookup table (mm).
        joint_derivs: ``(3, 4)`` joint velocity, acceleration and jerk.
        s: path length (mm); ``u`` and ``w`` are the curve parameters.
    """

    t: float
    pose: NDArray[np.float64]
    pose_derivs: NDArray[np.float64]
    joints: NDArray[np.float64]
    joint_derivs: NDArray[np.float64]
    s: float
    u: float
    w: float


@dataclass(frozen=True, eq=False)
class MotionPlan:
    """Everything produced by :func:`plan`."""

    waypoints: WaypointSet
    geometry: kin.RobotGeometry
    limits: KinematicLimits
    config: PlanConfig
    curve: BSplineCurve
    table: ArcLengthTable
    modifier: ModifierPolySet
    quat_spline: QuatSpline
    sync: PiecewiseBezier | None
    waypoint_lengths: NDArray[np.float64]
    segment_times: SegmentTimeResult
    time_scale: TimeScaleResult
    task: CompositeTrajectory
    offline_times: NDArray[np.float64]
    offline_s: NDArray[np.float64]
    offline_pose: NDArray[np.float64]
    offline_pose_derivs: NDArray[np.float64]
    offline_joints: NDArray[np.float64]
    offline_joint_derivs: NDArray[np.float64]
    joint: CompositeTrajectory
    lut: JointLUT = field(repr=False)

    @property
    def total_time(self) -> float:
        return self.task.total_time

    @property
    def total_length(self) -> float:
        return self.table.total_length

    def w_of_s(self, s: ArrayLike, order: int = 0) -> NDArray[np.float64]:
        return path_w(self.sync, self.table.total_length, s, order)

    def path_derivatives(self, s: ArrayLike) -> NDArray[np.float64]:
        """Pose and its path-length derivatives, shape ``(4, n, 4)``."""
        return path_derivatives(self.curve, self.modifier, self.quat_spline, self.sync, s)

    def pose_time_derivatives(self, t: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Path-length derivatives ``(4, n)`` and pose time derivatives ``(4, n, 4)``."""
        return _pose_in_time(self.task, t, self.curve, self.modifier, self.quat_spline, self.sync)


def path_w(sync: PiecewiseBezier | None, total: float, s: ArrayLike, order: int = 0) -> NDArray[np.float64]:
    ss = np.asarray(s, dtype=float)
    if sync is None:
        return ss / total if order == 0 else (np.full(ss.shape, 1.0 / total) if order == 1 else np.zeros(ss.shape))
    return eval_w_of_s(sync, ss, order)


def _alpha_derivatives(quat: QuatSpline, w: NDArray[np.float64]) -> NDArray[np.float64]:
    """``alpha(w)`` and ``d^k alpha / dw^k`` for ``k = 1..3``; shape ``(4, n)``."""
    if quat.is_constant:
        q = quat.base
        alpha = 2.0 * math.atan2(q[1], q[0])
        return np.vstack([np.full(w.shape, alpha), np.zeros((3,) + w.shape)])
    q = eval_orientation(quat, w, 0)
    alpha = 2.0 * np.arctan2(q[..., 1], q[..., 0])
    return np.vstack([alpha[None]] + [eval_orientation(quat, w, k)[..., 0][None] for k in (1, 2, 3)])


def _chain3(f: NDArray[np.float64], g: NDArray[np.float64]) -> list[NDArray[np.float64]]:
    """Derivatives of ``F(G(x))`` up to order 3 from ``F`` derivatives at ``G`` and ``G`` derivatives.

    ``f[k]`` has shape ``(n, ...)`` and ``g[k]`` shape ``(n,)``.
    """
    def b(a):
        return a.reshape(a.shape + (1,) * (f[1].ndim - 1))

    g1, g2, g3 = b(g[1]), b(g[2]), b(g[3])
    return [
        f[0],
        f[1] * g1,
        f[2] * g1**2 + f[1] * g2,
        f[3] * g1**3 + 3.0 * f[2] * g1 * g2 + f[1] * g3,
    ]


def path_derivatives(curve, modifier, quat, sync, s: ArrayLike) -> NDArray[np.float64]:
    """Pose ``[x, y, z, alpha]`` and its derivatives in path length, ``(4, n, 4)``."""
    ss = np.atleast_1d(np.asarray(s, dtype=float))
    u = [modifier.evaluate(ss, k) for k in range(4)]
    C = [curve.evaluate(u[0], k) for k in range(4)]
    pos = _chain3(C, u)
    total = modifier.total_length
    w = [path_w(sync, total, ss, k) for k in range(4)]
    a = _alpha_derivatives(quat, np.clip(w[0], 0.0, 1.0))
    alpha = _chain3([a[k] for k in range(4)], w)
    return np.stack([np.column_stack([pos[k], alpha[k]]) for k in range(4)])


def _pose_in_time(task, t, curve, modifier, quat, sync):
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    s = np.stack([task.evaluate(tt, k)[..., 0] for k in range(4)])
    s0 = np.clip(s[0], 0.0, modifier.total_length)
    Ps = path_derivatives(curve, modifier, quat, sync, s0)
    Pt = np.stack(_chain3([Ps[k] for k in range(4)], s))
    return s, Pt


def _joint_map(geom, task, curve, modifier, quat, sync):
    def joint_map(t: NDArray[np.float64]) -> NDArray[np.float64]:
        _, Pt = _pose_in_time(task, t, curve, modifier, quat, sync)
        jd = kin.joint_derivatives(geom, Pt[0], Pt[1:], 3)
        return np.transpose(jd, (1, 0, 2))

    return joint_map


def offline_grid(total_time: float, dt: float) -> NDArray[np.float64]:
    """Sample instants ``0, dt, 2 dt, ..., T``; a final remainder shorter than ``dt/2`` is merged."""
    n = int(math.floor(total_time / dt + 1e-9))
    t = np.arange(n + 1) * dt
    if total_time - t[-1] > 1e-12 * max(total_time, 1.0):
        if total_time - t[-1] < 0.5 * dt and t.size > 1:
            t = t[:-1]
        t = np.append(t, total_time)
    else:
        t[-1] = total_time
    return t


def plan(
    waypoints: WaypointSet,
    geometry: kin.RobotGeometry | None = None,
    limits: KinematicLimits | None = None,
    config: PlanConfig | None = None,
) -> MotionPlan:
    """Build a complete motion plan from tool-pose waypoints.

    Errors raised by a stage carry the stage name in ``exc.stage``.

    Raises:
        InvalidPath: fewer than two waypoints, or orientations not about x.
    """
    geometry = geometry or kin.default_geometry()
    limits = limits or DEFAULT_LIMITS
    cfg = config or PlanConfig()
    with _stage("validate"):
        waypoints.validate(min_count=2)
        if np.any(np.abs(waypoints.orientations[:, 1:]) > _X_ONLY_TOL_DEG):
            raise InvalidPath("the mechanism rotates about x only; beta and gamma must be zero")
    with _stage("position_spline"):
        curve, u_bar = fit_interpolating_spline(waypoints.positions, cfg.position_degree)
    with _stage("arc_length"):
        table = arc_length_table(curve, cfg.quadrature_tol)
        depth = 0
        # easy integrands (e.g. straight lines) give too few rows to fit a polynomial
        while len(table) < POLY_DEGREE + 1:
            depth += 1
            table = arc_length_table(curve, cfg.quadrature_tol, min_depth=depth)
    with _stage("modifier_polynomials"):
        modifier = fit_modifier_polynomials(table, curve, cfg.mse_tol)
    with _stage("orientation_spline"):
        quats = euler_to_quat(*np.radians(waypoints.orientations).T)
        quat = fit_orientation_spline(quats, cfg.orientation_degree, reduce_degree=True)
    with _stage("sync"):
        s_k = arc_length_at(curve, table, u_bar)
        s_k[0], s_k[-1] = 0.0, table.total_length
        sync = None if quat.is_constant else fit_w_of_s(s_k, quat.waypoint_params, tol=cfg.qp_tol)
    with _stage("segment_times"):
        spec = DerivativeSpec.through(s_k, cfg.trajectory_degree, end_orders=3)
        seg = optimize_segment_times(spec, cfg.cost_order, cfg.trajectory_degree, method=cfg.segment_time_method)
        unit = solve_min_jerk(spec, seg.tau, cfg.cost_order, cfg.trajectory_degree)
    with _stage("time_scaling"):
        jmap = _joint_map(geometry, unit, curve, modifier, quat, sync)
        scale = time_scale_optimize(unit, limits, jmap, cfg.tangential_samples, cfg.joint_samples)
        task = scale.trajectory
    with _stage("offline_sampling"):
        t_off = offline_grid(task.total_time, cfg.dt_offline)
        s_off, Pt = _pose_in_time(task, t_off, curve, modifier, quat, sync)
        joints = kin.inverse_position(geometry, Pt[0])
        jd = kin.joint_derivatives(geometry, Pt[0], Pt[1:], 3)
    with _stage("joint_trajectory"):
        table_d = np.concatenate([joints[:, None, :], np.transpose(jd, (1, 0, 2))], axis=1)
        joint = trajectory_from_derivatives(table_d, np.diff(t_off), cfg.trajectory_degree)
        lut = JointLUT.from_trajectory(joint)
    return MotionPlan(
        waypoints=waypoints, geometry=geometry, limits=limits, config=cfg, curve=curve, table=table,
        modifier=modifier, quat_spline=quat, sync=sync, waypoint_lengths=s_k, segment_times=seg,
        time_scale=scale, task=task, offline_times=t_off, offline_s=s_off[0], offline_pose=Pt[0],
        offline_pose_derivs=Pt[1:], offline_joints=joints, offline_joint_derivs=jd, joint=joint, lut=lut,
    )


def interpolate_step(plan: MotionPlan, t: float, lut: JointLUT | None = None) -> MotionSample:
    """Evaluate the plan at time ``t``.

    Joint values come from the lookup table (the runtime path); the pose is
    evaluated through the task chain ``s(t) -> u, w -> pose`` for reference.

    Raises:
        TimeOutOfRange: ``t`` outside ``[0, T]``.
    """
    T = plan.total_time
    t = float(t)
    if not (0.0 <= t <= T):
        raise TimeOutOfRange(f"t={t} outside [0, {T}]")
    table = (lut or plan.lut).evaluate(t, 3)
    s, Pt = plan.pose_time_derivatives(t)
    s0 = float(np.clip(s[0, 0], 0.0, plan.total_length))
    return MotionSample(
        t=t,
        pose=Pt[0, 0],
        pose_derivs=Pt[1:, 0],
        joints=table[0],
        joint_derivs=table[1:],
        s=s0,
        u=float(plan.modifier.evaluate(s0)),
        w=float(plan.w_of_s(s0)),
    )


def tracking_error(plan: MotionPlan, times: ArrayLike | None = None) -> tuple[float, float]:
    """Max mismatch between forward kinematics of the joint table and the task pose.

    Evaluated by default at the midpoints of the offline intervals, where
    the joint interpolation is least constrained.

    Returns:
        ``(position error in mm, orientation error in rad)``.
    """
    t = 0.5 * (plan.offline_times[:-1] + plan.offline_times[1:]) if times is None else np.asarray(times, dtype=float)
    _, Pt = plan.pose_time_derivatives(t)
    d = plan.joint.evaluate(t)
    pos_err, ang_err = 0.0, 0.0
    for di, Pi in zip(d, Pt[0]):
        q = kin.forward_position(plan.geometry, di, Pi)
        pos_err = max(pos_err, float(np.linalg.norm(q[:3] - Pi[:3])))
        ang_err = max(ang_err, abs(float(q[3] - Pi[3])))
    return pos_err, ang_err


# interpolator baselines

BASELINES = ("natural", "taylor1", "taylor2", "modifier")


@dataclass(frozen=True, eq=False)
class SampleStream:
    """Signals sampled on a common time grid.

    Attributes:
        t: ``(n,)`` sample times (s).
        signals: name to ``(n,)`` or ``(n, k)`` arrays.
        params: curve parameters ``u`` behind the samples, when applicable.
        overrun: the parameter had to be clipped at 1.
    """

    t: NDArray[np.float64]
    signals: dict
    params: NDArray[np.float64] | None = None
    overrun: bool = False

    def __len__(self) -> int:
        return self.t.size


def commanded_lengths(total: float, feed: float, dt: float) -> NDArray[np.float64]:
    """Path lengths ``k F dt`` reached at constant feed, not beyond the end."""
    n = int(math.floor(total / (feed * dt) + 1e-12))
    return np.arange(n + 1) * feed * dt


def baseline_params(
    method: str,
    curve: BSplineCurve,
    total: float,
    s: NDArray[np.float64],
    dt: float,
    feed: float,
    modifier: ModifierPolySet | None = None,
) -> tuple[NDArray[np.float64], bool]:
    """Curve parameters per tick for one interpolation method.

    ``natural`` advances ``u`` in proportion to path length, the Taylor
    methods expand ``u(t)`` to first or second order at each tick and
    ``modifier`` evaluates the piecewise polynomial ``u(s)``.

    Returns:
        ``(u, overrun)`` where ``overrun`` flags clipping at ``u = 1``.
    """
    n = s.size
    if method == "modifier":
        if modifier is None:
            raise ValueError("modifier method needs a ModifierPolySet")
        return modifier.evaluate(s), False
    u = np.zeros(n)
    ds = feed * dt
    for k in range(n - 1):
        uk = min(u[k], 1.0)
        if method == "natural":
            step = ds / total
        elif method in ("taylor1", "taylor2"):
            d1 = curve.evaluate(uk, 1)
            g = float(np.linalg.norm(d1))
            step = feed * dt / g
            if method == "taylor2":
                d2 = curve.evaluate(uk, 2)
                # constant feed, so only the curvature term of the second-order correction remains
                step -= 0.5 * dt**2 * feed**2 * float(d1 @ d2) / g**4
        else:
            raise ValueError(f"unknown method {method!r}")
        u[k + 1] = u[k] + step
    overrun = bool(np.any(u > 1.0))
    if overrun:
        warnings.warn("parameter passed the curve end and was clipped", ParamOverrun, stacklevel=2)
    return np.minimum(u, 1.0), overrun


def stream_signals(t: NDArray[np.float64], positions: NDArray[np.float64], joints: NDArray[np.float64] | None = None) -> dict:
    """Feed, tangential acceleration and jerk by central differences; joint rates likewise."""
    dt = float(t[1] - t[0]) if t.size > 1 else 1.0
    vel = np.gradient(positions, dt, axis=0, edge_order=1)
    feed = np.linalg.norm(vel, axis=1)
    acc = np.gradient(feed, dt, edge_order=1)
    jerk = np.gradient(acc, dt, edge_order=1)
    out = {"feed": feed, "accel": acc, "jerk": jerk}
    if joints is not None:
        jv = np.gradient(joints, dt, axis=0, edge_order=1)
        ja = np.gradient(jv, dt, axis=0, edge_order=1)
        jj = np.gradient(ja, dt, axis=0, edge_order=1)
        out.update(joint_vel=jv, joint_accel=ja, joint_jerk=jj)
    return out


def _stream(plan: MotionPlan, u: NDArray[np.float64], s: NDArray[np.float64], dt: float, overrun: bool = False) -> SampleStream:
    positions = plan.curve.evaluate(u)
    w = np.clip(plan.w_of_s(np.minimum(s, plan.total_length)), 0.0, 1.0)
    alpha = _alpha_derivatives(plan.quat_spline, w)[0]
    joints = kin.inverse_position(plan.geometry, np.column_stack([positions, alpha]))
    t = np.arange(s.size) * dt
    return SampleStream(t, stream_signals(t, positions, joints), u, overrun)


def ideal_stream(plan: MotionPlan, feed: float | None = None, dt: float | None = None) -> SampleStream:
    """Exact arc-length parameters at the commanded lengths (Newton inversion)."""
    feed = feed or plan.config.compare_feed
    dt = dt or plan.config.dt_offline
    s = commanded_lengths(plan.total_length, feed, dt)
    return _stream(plan, param_at_length(plan.curve, plan.table, s), s, dt)


def baseline_interpolate(
    method: str,
    plan: MotionPlan,
    feed: float | None = None,
    dt: float | None = None,
    modifier: ModifierPolySet | None = None,
) -> SampleStream:
    """Sample stream of one interpolation method at constant commanded feed.

    Warns:
        ParamOverrun: the parameter passed 1 and was clipped.
    """
    feed = feed or plan.config.compare_feed
    dt = dt or plan.config.dt_offline
    s = commanded_lengths(plan.total_length, feed, dt)
    u, overrun = baseline_params(method, plan.curve, plan.total_length, s, dt, feed, modifier or plan.modifier)
    return _stream(plan, u, s, dt, overrun)


@dataclass(frozen=True)
class SignalMetrics:
    max_deviation: float
    mean_deviation: float
    deviation_std: float
    peak: float
    rms: float
    std: float

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class MetricsReport:
    """Deviation from the ideal stream and fluctuation statistics per signal."""

    signals: dict

    def to_dict(self) -> dict:
        return {name: m.to_dict() for name, m in self.signals.items()}

    def __getitem__(self, name: str) -> SignalMetrics:
        return self.signals[name]


def compute_metrics(ideal: SampleStream, actual: SampleStream) -> MetricsReport:
    """Max and mean absolute deviation plus peak, RMS and std of each common signal.

    Raises:
        LengthMismatch: the streams differ in length.
    """
    if len(ideal) != len(actual):
        raise LengthMismatch(f"streams have {len(ideal)} and {len(actual)} samples")
    out = {}
    for name in ideal.signals:
        if name not in actual.signals:
            continue
        a = np.asarray(actual.signals[name], dtype=float)
        b = np.asarray(ideal.signals[name], dtype=float)
        dev = np.abs(a - b)
        out[name] = SignalMetrics(
            max_deviation=float(np.max(dev)),
            mean_deviation=float(np.mean(dev)),
            deviation_std=float(np.std(a - b)),
            peak=float(np.max(np.abs(a))),
            rms=float(np.sqrt(np.mean(a * a))),
            std=float(np.std(a)),
        )
    return MetricsReport(out)


def interpolator_streams(
    plan: MotionPlan,
    feed: float | None = None,
    dt: float | None = None,
    tolerances: tuple[float, ...] = (1e-8, 1e-10, 1e-12),
) -> dict[str, SampleStream]:
    """Ideal stream plus one stream per baseline, keyed by label.

    Parameter overruns are recorded on each stream's ``overrun`` flag
    instead of being warned about.
    """
    streams = {"ideal": ideal_stream(plan, feed, dt)}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ParamOverrun)
        for method in ("natural", "taylor1", "taylor2"):
            streams[method] = baseline_interpolate(method, plan, feed, dt)
        for tol in tolerances:
            mod = plan.modifier if tol == plan.config.mse_tol else fit_modifier_polynomials(plan.table, plan.curve, tol)
            streams[f"modifier({tol:g})"] = baseline_interpolate("modifier", plan, feed, dt, mod)
    return streams


def compare_interpolators(
    plan: MotionPlan,
    feed: float | None = None,
    dt: float | None = None,
    tolerances: tuple[float, ...] = (1e-8, 1e-10, 1e-12),
    streams: dict[str, SampleStream] | None = None,
) -> dict[str, MetricsReport]:
    """Metrics of every baseline against the ideal stream, keyed by label."""
    streams = streams or interpolator_streams(plan, feed, dt, tolerances)
    ideal = streams["ideal"]
    return {label: compute_metrics(ideal, s) for label, s in streams.items() if label != "ideal"}


def uniform_time_trajectory(plan: MotionPlan) -> CompositeTrajectory:
    """Minimum-jerk trajectory with equal segment times, stretched to the plan's duration."""
    cfg = plan.config
    spec = DerivativeSpec.through(plan.waypoint_lengths, cfg.trajectory_degree, end_orders=3)
    m = spec.n_segments
    return solve_min_jerk(spec, np.full(m, plan.total_time / m), cfg.cost_order, cfg.trajectory_degree)


def compare_time_allocation(plan: MotionPlan) -> dict:
    """Peak tangential velocity, acceleration and jerk with and without time allocation."""
    baseline = uniform_time_trajectory(plan)
    opt = trajectory_peaks(plan.task, plan.config.tangential_samples)
    base = trajectory_peaks(baseline, plan.config.tangential_samples)
    names = ("velocity", "acceleration", "jerk")
    return {
        "optimized_peak": dict(zip(names, map(float, opt))),
        "uniform_peak": dict(zip(names, map(float, base))),
        "reduction": {n: float(1.0 - o / b) for n, o, b in zip(names, opt, base)},
        "total_time": plan.total_time,
    }
