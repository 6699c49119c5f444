"""Unit quaternions and B-spline orientation paths in log-quaternion space.

Quaternions are stored as arrays ``[q0, q1, q2, q3]`` with the scalar part
first; every function broadcasts over leading axes. An orientation path is
``Q(w) = Q1 exp([0, psi(w)])`` where ``psi`` is a quintic B-spline through
``Im log(Q1* Q_k)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .bspline import BSplineCurve, fit_interpolating_spline, params_from_distances
from .errors import (
    AntipodalAmbiguity,
    GimbalProximityWarning,
    HemisphereCrossing,
    NotARotation,
    OrderTooHigh,
    ParamOutOfRange,
    TooFewWaypoints,
)

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
_SERIES_TERMS = 30
_SERIES_LIMIT = 9.0
_DUPLICATE_ANGLE = 1e-12
_GIMBAL_MARGIN_DEG = 1e-3


def normalize(q: ArrayLike) -> NDArray[np.float64]:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def conjugate(q: ArrayLike) -> NDArray[np.float64]:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def _hamilton(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    a0, av = a[..., :1], a[..., 1:]
    b0, bv = b[..., :1], b[..., 1:]
    scalar = a0 * b0 - np.sum(av * bv, axis=-1, keepdims=True)
    vector = a0 * bv + b0 * av + np.cross(av, bv)
    return np.concatenate([scalar, vector], axis=-1)


def quat_mul(q1: ArrayLike, q2: ArrayLike) -> NDArray[np.float64]:
    """Hamilton product of unit quaternions, renormalized."""
    return normalize(_hamilton(normalize(q1), normalize(q2)))


def rotate(q: ArrayLike, v: ArrayLike) -> NDArray[np.float64]:
    """Rotate vectors by ``p' = Q p Q*``."""
    q = normalize(q)
    v = np.asarray(v, dtype=float)
    pure = np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)
    return _hamilton(_hamilton(q, pure), conjugate(q))[..., 1:]


def _sinc_series(x: NDArray[np.float64], order: int) -> NDArray[np.float64]:
    """``d^order/dx^order`` of ``S(x) = sin(sqrt x)/sqrt x`` by its power series."""
    out = np.zeros_like(x)
    for n in range(_SERIES_TERMS - 1, order - 1, -1):
        coef = (-1) ** n * math.perm(n, order) / math.factorial(2 * n + 1)
        out = out * x + coef
    return out


def _sinc_derivs(x: NDArray[np.float64]) -> list[NDArray[np.float64]]:
    """``[S, S', S'', S''']`` of ``S(x) = sin(sqrt x)/sqrt x`` for ``x >= 0``."""
    small = x <= _SERIES_LIMIT
    derivs = [_sinc_series(np.where(small, x, 0.0), k) for k in range(4)]
    if not np.all(small):
        xs = np.where(small, 1.0, x)
        t = np.sqrt(xs)
        s0 = np.sin(t) / t
        c0 = np.cos(t)
        s1 = (c0 - s0) / (2.0 * xs)
        s2 = (-0.5 * s0 - 3.0 * s1) / (2.0 * xs)
        s3 = (-0.5 * s1 - 5.0 * s2) / (2.0 * xs)
        derivs = [np.where(small, d, big) for d, big in zip(derivs, (s0, s1, s2, s3))]
    return derivs


def _cos_sqrt(x: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.cos(np.sqrt(np.maximum(x, 0.0)))


def quat_exp(psi: ArrayLike) -> NDArray[np.float64]:
    """``exp([0, psi]) = [cos|psi|, sin|psi| psi/|psi|]``."""
    psi = np.asarray(psi, dtype=float)
    x = np.sum(psi * psi, axis=-1)
    s = _sinc_derivs(x)[0]
    q = np.concatenate([_cos_sqrt(x)[..., None], s[..., None] * psi], axis=-1)
    return normalize(q)


def quat_log(q: ArrayLike, canonical: bool = True) -> NDArray[np.float64]:
    """Imaginary part of ``log Q`` (the scaled half-angle axis ``psi``).

    With ``canonical`` the sign is first flipped so that ``q0 >= 0``,
    selecting the shortest rotation.
    """
    q = normalize(q)
    if canonical:
        q = np.where(q[..., :1] < 0, -q, q)
    vec = q[..., 1:]
    vn = np.linalg.norm(vec, axis=-1)
    half = np.arctan2(vn, q[..., 0])
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(vn > 1e-300, half / np.where(vn > 1e-300, vn, 1.0), 1.0 / np.maximum(q[..., 0], 1e-300))
    return scale[..., None] * vec


def rotation_angle(q: ArrayLike) -> NDArray[np.float64]:
    """Rotation angle in ``[0, pi]`` represented by ``q``."""
    q = normalize(q)
    return 2.0 * np.arctan2(np.linalg.norm(q[..., 1:], axis=-1), np.abs(q[..., 0]))


def geodesic_angle(q1: ArrayLike, q2: ArrayLike) -> NDArray[np.float64]:
    """Angle of the relative rotation ``Q1* Q2``."""
    return rotation_angle(_hamilton(conjugate(normalize(q1)), normalize(q2)))


def quat_to_rotmat(q: ArrayLike) -> NDArray[np.float64]:
    q0, q1, q2, q3 = np.moveaxis(normalize(q), -1, 0)
    r = np.empty(np.shape(q0) + (3, 3))
    r[..., 0, 0] = 1 - 2 * (q2 * q2 + q3 * q3)
    r[..., 0, 1] = 2 * (q1 * q2 - q0 * q3)
    r[..., 0, 2] = 2 * (q1 * q3 + q0 * q2)
    r[..., 1, 0] = 2 * (q1 * q2 + q0 * q3)
    r[..., 1, 1] = 1 - 2 * (q1 * q1 + q3 * q3)
    r[..., 1, 2] = 2 * (q2 * q3 - q0 * q1)
    r[..., 2, 0] = 2 * (q1 * q3 - q0 * q2)
    r[..., 2, 1] = 2 * (q2 * q3 + q0 * q1)
    r[..., 2, 2] = 1 - 2 * (q1 * q1 + q2 * q2)
    return r


def rotmat_to_quat(rot: ArrayLike, atol: float = 1e-8) -> NDArray[np.float64]:
    """Cayley's method: component magnitudes from squared sums, then signs.

    The largest component is taken positive and the signs of the others
    follow from the pairwise products encoded in the off-diagonal sums and
    differences. The result is flipped to ``q0 >= 0`` unless ``q0 == 0``.
    """
    R = np.asarray(rot, dtype=float)
    if R.shape[-2:] != (3, 3):
        raise NotARotation("expected a 3x3 matrix")
    gram = np.swapaxes(R, -1, -2) @ R
    if np.any(np.abs(gram - np.eye(3)) > atol) or np.any(np.linalg.det(R) <= 0):
        raise NotARotation("matrix is not orthonormal with determinant +1")
    r11, r12, r13 = R[..., 0, 0], R[..., 0, 1], R[..., 0, 2]
    r21, r22, r23 = R[..., 1, 0], R[..., 1, 1], R[..., 1, 2]
    r31, r32, r33 = R[..., 2, 0], R[..., 2, 1], R[..., 2, 2]
    d32, d13, d21 = r32 - r23, r13 - r31, r21 - r12
    s12, s13, s23 = r12 + r21, r13 + r31, r23 + r32
    mag = 0.25 * np.sqrt(np.stack([
        (1 + r11 + r22 + r33) ** 2 + d32**2 + d13**2 + d21**2,
        d32**2 + (1 + r11 - r22 - r33) ** 2 + s12**2 + s13**2,
        d13**2 + s12**2 + (1 - r11 + r22 - r33) ** 2 + s23**2,
        d21**2 + s13**2 + s23**2 + (1 - r11 - r22 + r33) ** 2,
    ], axis=-1))
    # products[k][j] ~ 4 q_k q_j
    prod = np.stack([
        np.stack([np.ones_like(d32), d32, d13, d21], -1),
        np.stack([d32, np.ones_like(d32), s12, s13], -1),
        np.stack([d13, s12, np.ones_like(d32), s23], -1),
        np.stack([d21, s13, s23, np.ones_like(d32)], -1),
    ], axis=-2)
    pivot = np.argmax(mag, axis=-1)
    row = np.take_along_axis(prod, pivot[..., None, None], axis=-2)[..., 0, :]
    signs = np.where(row < 0, -1.0, 1.0)
    q = mag * signs
    q = np.where(q[..., :1] < 0, -q, q)
    return normalize(q)


def _axis_quat(axis: int, angle: NDArray[np.float64]) -> NDArray[np.float64]:
    angle = np.asarray(angle, dtype=float)
    q = np.zeros(angle.shape + (4,))
    q[..., 0] = np.cos(angle / 2)
    q[..., 1 + axis] = np.sin(angle / 2)
    return q


def euler_to_quat(alpha: ArrayLike, beta: ArrayLike, gamma: ArrayLike, degrees: bool = False) -> NDArray[np.float64]:
    """Intrinsic X-Y-Z Euler angles to a unit quaternion, ``Qx(a) Qy(b) Qz(g)``."""
    a, b, g = (np.asarray(v, dtype=float) for v in (alpha, beta, gamma))
    if degrees:
        a, b, g = np.radians(a), np.radians(b), np.radians(g)
    q = _hamilton(_hamilton(_axis_quat(0, a), _axis_quat(1, b)), _axis_quat(2, g))
    return normalize(q)


def quat_to_euler(q: ArrayLike, degrees: bool = False) -> NDArray[np.float64]:
    """Unit quaternion to intrinsic X-Y-Z angles ``(alpha, beta, gamma)``.

    Warns with :class:`GimbalProximityWarning` when ``|beta|`` is within
    1e-3 deg of 90 deg.
    """
    R = quat_to_rotmat(q)
    sb = np.clip(R[..., 0, 2], -1.0, 1.0)
    beta = np.arcsin(sb)
    alpha = np.arctan2(-R[..., 1, 2], R[..., 2, 2])
    gamma = np.arctan2(-R[..., 0, 1], R[..., 0, 0])
    if np.any(np.abs(np.degrees(beta)) > 90.0 - _GIMBAL_MARGIN_DEG):
        warnings.warn("beta is within 1e-3 deg of +-90 deg", GimbalProximityWarning, stacklevel=2)
    out = np.stack([alpha, beta, gamma], axis=-1)
    return np.degrees(out) if degrees else out


def slerp(q1: ArrayLike, q2: ArrayLike, w: ArrayLike) -> NDArray[np.float64]:
    """``Q1 exp(w log(Q1* Q2))`` along the shorter geodesic."""
    q1 = normalize(q1)
    rel = _hamilton(conjugate(q1), normalize(q2))
    if np.any(np.abs(rel[..., 0]) < 1e-9):
        raise AntipodalAmbiguity("relative rotation is pi; the geodesic is not unique")
    ww = np.asarray(w, dtype=float)
    if np.any((ww < 0) | (ww > 1)):
        raise ParamOutOfRange("slerp parameter outside [0, 1]")
    psi = quat_log(rel)
    return quat_mul(q1, quat_exp(ww[..., None] * psi))


def canonicalize_sequence(quats: ArrayLike) -> NDArray[np.float64]:
    """Flip signs so consecutive quaternions have nonnegative dot products."""
    q = normalize(np.asarray(quats, dtype=float)).copy()
    for k in range(1, q.shape[0]):
        if np.dot(q[k - 1], q[k]) < 0:
            q[k] = -q[k]
    return q


@dataclass(frozen=True, eq=False)
class QuatSpline:
    """Orientation path ``Q(w) = base exp([0, psi(w)])``.

    Attributes:
        base: first orientation ``Q1``.
        psi_curve: B-spline through the log-space vectors ``psi_k``.
        params: ``w`` assigned to each distinct orientation.
        waypoint_params: ``w`` assigned to every input orientation;
            collapsed duplicates share a value.
        unique_index: for each input orientation, its row in ``params``.
    """

    base: NDArray[np.float64]
    psi_curve: BSplineCurve
    params: NDArray[np.float64]
    waypoint_params: NDArray[np.float64]
    unique_index: NDArray[np.intp]

    @property
    def is_constant(self) -> bool:
        return self.params.size == 1


def fit_orientation_spline(quats: ArrayLike, degree: int = 5, reduce_degree: bool = False) -> QuatSpline:
    """Interpolate orientations with a B-spline in log-quaternion space.

    Consecutive duplicates are collapsed; parameters are centripetal in the
    geodesic angle between consecutive distinct orientations and the same
    parameters drive knot averaging.

    Args:
        quats: ``(K, 4)`` unit quaternions.
        degree: spline degree.
        reduce_degree: lower the degree to fit fewer distinct orientations
            instead of raising.

    Raises:
        TooFewWaypoints: fewer than ``degree + 1`` distinct orientations.
        HemisphereCrossing: a rotation relative to the first reaches pi.
    """
    q = canonicalize_sequence(np.atleast_2d(quats))
    step = geodesic_angle(q[:-1], q[1:])
    keep = np.concatenate([[True], step > _DUPLICATE_ANGLE])
    unique_index = np.cumsum(keep) - 1
    uq = q[keep]
    base = uq[0]
    if uq.shape[0] == 1:
        curve = BSplineCurve(0, np.array([0.0, 1.0]), np.zeros((1, 3)))
        params = np.array([0.0])
        return QuatSpline(base, curve, params, np.zeros(q.shape[0]), unique_index)
    if uq.shape[0] < degree + 1:
        if not reduce_degree:
            raise TooFewWaypoints(f"{uq.shape[0]} distinct orientations cannot support degree {degree}")
        degree = uq.shape[0] - 1
    rel = _hamilton(conjugate(base)[None, :], uq)
    if np.any(rel[:, 0] <= 1e-12):
        k = int(np.flatnonzero(rel[:, 0] <= 1e-12)[0])
        raise HemisphereCrossing(f"orientation {k} is rotated by pi or more from the first")
    psi = quat_log(rel, canonical=False)
    params = params_from_distances(geodesic_angle(uq[:-1], uq[1:]))
    curve, _ = fit_interpolating_spline(psi, degree, params=params)
    return QuatSpline(base, curve, params, params[unique_index], unique_index)


def _orientation_jets(spline: QuatSpline, w: NDArray[np.float64], order: int) -> list[NDArray[np.float64]]:
    """``[Q, Q', ...]`` up to ``order`` as arrays of shape ``(n, 4)``."""
    psi = [spline.psi_curve.evaluate(w, k) for k in range(order + 1)]
    x = [np.sum(psi[0] * psi[0], axis=-1)]
    if order >= 1:
        x.append(2.0 * np.sum(psi[0] * psi[1], axis=-1))
    if order >= 2:
        x.append(2.0 * (np.sum(psi[1] * psi[1], axis=-1) + np.sum(psi[0] * psi[2], axis=-1)))
    if order >= 3:
        x.append(2.0 * np.sum(psi[0] * psi[3], axis=-1) + 6.0 * np.sum(psi[1] * psi[2], axis=-1))
    S = _sinc_derivs(x[0])
    C = [_cos_sqrt(x[0])] + [-0.5 * S[k - 1] for k in range(1, 4)]

    def compose(f):
        out = [f[0]]
        if order >= 1:
            out.append(f[1] * x[1])
        if order >= 2:
            out.append(f[2] * x[1] ** 2 + f[1] * x[2])
        if order >= 3:
            out.append(f[3] * x[1] ** 3 + 3.0 * f[2] * x[1] * x[2] + f[1] * x[3])
        return out

    c = compose(C)
    s = compose(S)
    jets = []
    for k in range(order + 1):
        vec = sum(math.comb(k, j) * s[j][:, None] * psi[k - j] for j in range(k + 1))
        e = np.concatenate([c[k][:, None], vec], axis=-1)
        jets.append(_hamilton(np.broadcast_to(spline.base, e.shape), e))
    return jets


def orientation_derivatives(spline: QuatSpline, w: ArrayLike, order: int = 3) -> list[NDArray[np.float64]]:
    """Quaternion path and its ``w``-derivatives ``[Q, Q', Q'', Q''']``."""
    if order > 3:
        raise OrderTooHigh("orientation derivatives available up to order 3")
    ww = np.atleast_1d(np.asarray(w, dtype=float))
    if np.any((ww < -1e-12) | (ww > 1 + 1e-12)):
        raise ParamOutOfRange("orientation parameter outside [0, 1]")
    ww = np.clip(ww, 0.0, 1.0)
    jets = _orientation_jets(spline, ww, order)
    jets[0] = normalize(jets[0])
    return jets if np.ndim(w) else [j[0] for j in jets]


def eval_orientation(spline: QuatSpline, w: ArrayLike, order: int = 0) -> NDArray[np.float64]:
    """Orientation (order 0) or spatial angular velocity / acceleration / jerk in ``w``.

    For ``order >= 1`` the result is ``d^(order-1)/dw^(order-1)`` of
    ``omega = 2 Im(Q' Q*)``.
    """
    jets = orientation_derivatives(spline, w, order)
    if order == 0:
        return jets[0]
    q, dq = jets[0], jets[1]
    qc = conjugate(q)
    if order == 1:
        return 2.0 * _hamilton(dq, qc)[..., 1:]
    dqc = conjugate(dq)
    if order == 2:
        return 2.0 * (_hamilton(jets[2], qc) + _hamilton(dq, dqc))[..., 1:]
    ddqc = conjugate(jets[2])
    return 2.0 * (_hamilton(jets[3], qc) + 2.0 * _hamilton(jets[2], dqc) + _hamilton(dq, ddqc))[..., 1:]
