"""Minimum-derivative composite Bezier trajectories.

Each segment ``k`` is a degree-``N`` Bezier curve in normalized time
``zeta = (t - t_k) / tau_k``. Segments are tied together through their
endpoint derivatives (orders ``0..h`` with ``N = 2h + 1``), which makes the
control points of a segment an invertible linear function of the
derivatives at its two ends. The squared ``r``-th derivative integrated
over time is then a quadratic form in the stacked derivative vector ``d``;
fixed entries are eliminated and the free ones solved in closed form.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse as sp
import scipy.special
from numpy.typing import ArrayLike, NDArray

from .errors import (
    InconsistentSpec,
    InfeasibleLimits,
    NonPositiveDuration,
    OrderTooHigh,
    SingularRuu,
    SolverStall,
    TimeOutOfRange,
)

DEFAULT_DEGREE = 7
DEFAULT_ORDER = 3
TAU_FLOOR = 1e-3


def falling(n: int, r: int) -> int:
    """``n! / (n - r)!`` (zero when ``r > n``)."""
    return math.perm(n, r) if 0 <= r <= n else 0


def forward_diff_matrix(N: int, r: int) -> NDArray[np.float64]:
    """``(N-r+1) x (N+1)`` matrix of the ``r``-th forward difference."""
    if r < 0 or r > N:
        raise OrderTooHigh(f"difference order {r} outside [0, {N}]")
    row = np.array([(-1) ** (r - j) * math.comb(r, j) for j in range(r + 1)], dtype=float)
    D = np.zeros((N - r + 1, N + 1))
    for i in range(N - r + 1):
        D[i, i : i + r + 1] = row
    return D


def bernstein_basis(n: int, zeta: ArrayLike) -> NDArray[np.float64]:
    """Bernstein polynomials ``b_i^n(zeta)`` as columns, shape ``(len(zeta), n+1)``."""
    z = np.atleast_1d(np.asarray(zeta, dtype=float))[:, None]
    i = np.arange(n + 1)
    binom = np.array([math.comb(n, k) for k in range(n + 1)], dtype=float)
    return binom * z**i * (1.0 - z) ** (n - i)


def bernstein_gram(N: int, r: int) -> NDArray[np.float64]:
    """``integral_0^1 b b^T`` for the degree ``m = N - r`` basis."""
    m = N - r
    if m < 0:
        raise OrderTooHigh(f"order {r} exceeds degree {N}")
    F = np.empty((m + 1, m + 1))
    for i in range(m + 1):
        for j in range(m + 1):
            F[i, j] = math.comb(m, i) * math.comb(m, j) / ((2 * m + 1) * math.comb(2 * m, i + j))
    return F


def cost_matrix(N: int, r: int) -> NDArray[np.float64]:
    """Quadratic form of the ``r``-th derivative cost for ``tau = 1``."""
    D = forward_diff_matrix(N, r)
    return falling(N, r) ** 2 * D.T @ bernstein_gram(N, r) @ D


def segment_cost(control_points: ArrayLike, tau: float, r: int = DEFAULT_ORDER) -> float:
    """``integral (d^r rho / dt^r)^2 dt`` over one segment, summed over axes."""
    if tau <= 0:
        raise NonPositiveDuration(f"segment duration {tau} must be positive")
    rho = np.asarray(control_points, dtype=float)
    if rho.ndim == 1:
        rho = rho[:, None]
    N = rho.shape[0] - 1
    # differencing first avoids cancellation in the full quadratic form
    diff = np.diff(rho, n=r, axis=0)
    F = bernstein_gram(N, r)
    return float(falling(N, r) ** 2 * tau ** (1 - 2 * r) * np.einsum("ia,ij,ja->", diff, F, diff))


def bezier_derivative(control_points: ArrayLike, zeta: ArrayLike, order: int = 0, tau: float = 1.0) -> NDArray[np.float64]:
    """Time derivative of a Bezier segment of duration ``tau`` at ``zeta``."""
    rho = np.asarray(control_points, dtype=float)
    N = rho.shape[0] - 1
    if order > N:
        return np.zeros(np.shape(np.atleast_1d(zeta)) + rho.shape[1:])
    D = forward_diff_matrix(N, order)
    return falling(N, order) / tau**order * bernstein_basis(N - order, zeta) @ (D @ rho)


def endpoint_map(N: int, tau: float = 1.0) -> NDArray[np.float64]:
    """Rows giving derivatives ``0..h`` at ``zeta = 0`` then at ``zeta = 1``."""
    if N % 2 == 0:
        raise InconsistentSpec(f"degree {N} must be odd so endpoint derivatives determine the segment")
    h = (N - 1) // 2
    A = np.zeros((2 * (h + 1), N + 1))
    for k in range(h + 1):
        Dk = forward_diff_matrix(N, k) * (falling(N, k) / tau**k)
        A[k] = Dk[0]
        A[h + 1 + k] = Dk[-1]
    return A


@dataclass(frozen=True, eq=False)
class DerivativeSpec:
    """Prescribed derivatives at the waypoints of a composite trajectory.

    Attributes:
        values: ``(m+1, h+1, dim)`` derivative values at each waypoint,
            order ``k`` in units per ``s^k``. Entries of free slots are
            ignored.
        fixed: ``(m+1, h+1)`` mask; order 0 must be fixed everywhere.
    """

    values: NDArray[np.float64]
    fixed: NDArray[np.bool_]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 2:
            vals = vals[:, :, None]
        fixed = np.asarray(self.fixed, dtype=bool)
        if vals.ndim != 3 or fixed.shape != vals.shape[:2]:
            raise InconsistentSpec(f"values {vals.shape} and mask {fixed.shape} disagree")
        if vals.shape[0] < 2:
            raise InconsistentSpec("at least two waypoints are required")
        if not np.all(fixed[:, 0]):
            raise InconsistentSpec("positions must be fixed at every waypoint")
        vals = np.where(fixed[:, :, None], vals, 0.0)
        vals.setflags(write=False)
        fixed.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "fixed", fixed)

    @property
    def n_segments(self) -> int:
        return self.values.shape[0] - 1

    @property
    def h(self) -> int:
        return self.values.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def points(self) -> NDArray[np.float64]:
        return self.values[:, 0, :]

    @classmethod
    def through(cls, points: ArrayLike, degree: int = DEFAULT_DEGREE, end_orders: int = 0) -> DerivativeSpec:
        """Waypoints with orders ``1..end_orders`` pinned to zero at both ends.

        Interior derivatives are free. ``end_orders = 3`` with degree 7 is a
        rest-to-rest motion with zero end jerk.
        """
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        h = (degree - 1) // 2
        if end_orders > h:
            raise InconsistentSpec(f"cannot pin {end_orders} end orders with degree {degree}")
        values = np.zeros((pts.shape[0], h + 1, pts.shape[1]))
        values[:, 0] = pts
        fixed = np.zeros((pts.shape[0], h + 1), dtype=bool)
        fixed[:, 0] = True
        fixed[0, : end_orders + 1] = True
        fixed[-1, : end_orders + 1] = True
        return cls(values, fixed)

    @classmethod
    def hermite(cls, derivatives: ArrayLike) -> DerivativeSpec:
        """Every derivative fixed; ``derivatives`` has shape ``(m+1, h+1, dim)``."""
        vals = np.asarray(derivatives, dtype=float)
        if vals.ndim == 2:
            vals = vals[:, :, None]
        return cls(vals, np.ones(vals.shape[:2], dtype=bool))


@dataclass(frozen=True, eq=False)
class ConstraintSystem:
    """Block form of the endpoint-derivative constraints.

    Attributes:
        A: block-diagonal map from stacked control points to segment-end
            derivatives, ``2m(h+1) x m(N+1)``.
        selection: map from the unique per-waypoint derivatives ``d`` to
            segment-end derivatives; shared junction entries are duplicated.
        M: permutation with ``M d = [d_fixed; d_free]``.
        n_fixed: number of fixed entries.
    """

    A: sp.csr_matrix
    selection: sp.csr_matrix
    M: sp.csr_matrix
    n_fixed: int


def assemble_constraints(spec: DerivativeSpec, tau: ArrayLike, degree: int = DEFAULT_DEGREE) -> ConstraintSystem:
    """Build ``A``, the junction selection matrix and the fixed/free permutation."""
    t = _check_tau(tau, spec.n_segments)
    h = (degree - 1) // 2
    if h != spec.h:
        raise InconsistentSpec(f"spec carries orders 0..{spec.h} but degree {degree} needs 0..{h}")
    m = spec.n_segments
    A = sp.block_diag([endpoint_map(degree, tk) for tk in t], format="csr")
    nd = h + 1
    rows = np.arange(2 * m * nd)
    seg = rows // (2 * nd)
    local = rows % (2 * nd)
    cols = (seg + local // nd) * nd + local % nd
    S = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(2 * m * nd, (m + 1) * nd))
    flat = spec.fixed.ravel()
    order = np.concatenate([np.flatnonzero(flat), np.flatnonzero(~flat)])
    M = sp.csr_matrix((np.ones(order.size), (np.arange(order.size), order)), shape=(order.size, order.size))
    return ConstraintSystem(A, S, M, int(flat.sum()))


def _check_tau(tau: ArrayLike, m: int) -> NDArray[np.float64]:
    t = np.atleast_1d(np.asarray(tau, dtype=float))
    if t.shape != (m,):
        raise InconsistentSpec(f"{t.size} durations for {m} segments")
    if np.any(~np.isfinite(t)) or np.any(t <= 0):
        raise NonPositiveDuration("segment durations must be positive and finite")
    return t


@dataclass(frozen=True, eq=False)
class CompositeTrajectory:
    """Piecewise Bezier trajectory in time.

    Attributes:
        control_points: ``(m, N+1, dim)`` control points per segment.
        durations: ``(m,)`` segment durations in seconds.
    """

    control_points: NDArray[np.float64]
    durations: NDArray[np.float64]
    starts: NDArray[np.float64] = field(init=False)

    def __post_init__(self):
        ctrl = np.asarray(self.control_points, dtype=float)
        if ctrl.ndim == 2:
            ctrl = ctrl[:, :, None]
        tau = np.atleast_1d(np.asarray(self.durations, dtype=float))
        if tau.shape != (ctrl.shape[0],):
            raise InconsistentSpec("one duration per segment is required")
        if np.any(tau <= 0):
            raise NonPositiveDuration("segment durations must be positive")
        starts = np.concatenate([[0.0], np.cumsum(tau)[:-1]])
        for arr in (ctrl, tau, starts):
            arr.setflags(write=False)
        object.__setattr__(self, "control_points", ctrl)
        object.__setattr__(self, "durations", tau)
        object.__setattr__(self, "starts", starts)

    @property
    def degree(self) -> int:
        return self.control_points.shape[1] - 1

    @property
    def n_segments(self) -> int:
        return self.control_points.shape[0]

    @property
    def dim(self) -> int:
        return self.control_points.shape[2]

    @property
    def total_time(self) -> float:
        return float(self.starts[-1] + self.durations[-1])

    @property
    def breakpoints(self) -> NDArray[np.float64]:
        return np.append(self.starts, self.total_time)

    def segment_index(self, t: ArrayLike) -> NDArray[np.intp]:
        tt = np.asarray(t, dtype=float)
        return np.clip(np.searchsorted(self.starts, tt, side="right") - 1, 0, self.n_segments - 1)

    def evaluate(self, t: ArrayLike, order: int = 0) -> NDArray[np.float64]:
        """Value or time derivative at times ``t``; shape ``t.shape + (dim,)``."""
        tt = np.asarray(t, dtype=float)
        T = self.total_time
        if np.any((tt < -1e-12 * max(T, 1.0)) | (tt > T * (1 + 1e-12))):
            raise TimeOutOfRange(f"time outside [0, {T}]")
        flat = np.clip(tt.ravel(), 0.0, T)
        idx = self.segment_index(flat)
        N = self.degree
        if order > N:
            return np.zeros(tt.shape + (self.dim,))
        zeta = np.clip((flat - self.starts[idx]) / self.durations[idx], 0.0, 1.0)
        basis = bernstein_basis(N - order, zeta)
        # repeated subtraction keeps differences of repeated points exactly zero
        diff_ctrl = np.diff(self.control_points, n=order, axis=1)
        out = np.einsum("ni,nid->nd", basis, diff_ctrl[idx])
        out *= (falling(N, order) / self.durations[idx] ** order)[:, None]
        return out.reshape(tt.shape + (self.dim,))

    def __call__(self, t: ArrayLike, order: int = 0) -> NDArray[np.float64]:
        return self.evaluate(t, order)

    def scaled(self, k: float) -> CompositeTrajectory:
        """Same geometry with every duration multiplied by ``k``."""
        if k <= 0:
            raise NonPositiveDuration("time scale must be positive")
        return CompositeTrajectory(self.control_points, self.durations * k)

    def cost(self, r: int = DEFAULT_ORDER) -> float:
        return sum(segment_cost(c, t, r) for c, t in zip(self.control_points, self.durations))

    def junction_residuals(self, max_order: int | None = None) -> NDArray[np.float64]:
        """Max derivative mismatch at interior junctions per order ``0..max_order``."""
        N = self.degree
        h = (N - 1) // 2 if max_order is None else max_order
        res = np.zeros(h + 1)
        for k in range(h + 1):
            Dk = forward_diff_matrix(N, k) * falling(N, k)
            right = np.einsum("j,mjd->md", Dk[-1], self.control_points[:-1]) / self.durations[:-1, None] ** k
            left = np.einsum("j,mjd->md", Dk[0], self.control_points[1:]) / self.durations[1:, None] ** k
            if right.size:
                res[k] = np.max(np.abs(right - left))
        return res


def _reduced_cost(degree: int, r: int) -> NDArray[np.float64]:
    """``G = A1^-T Q A1^-1`` for a unit-duration segment."""
    A1 = endpoint_map(degree, 1.0)
    A1inv = np.linalg.inv(A1)
    return A1inv.T @ cost_matrix(degree, r) @ A1inv


def _order_exponents(degree: int, r: int) -> NDArray[np.float64]:
    h = (degree - 1) // 2
    k = np.tile(np.arange(h + 1), 2)
    return k[:, None] + k[None, :] + 1 - 2 * r


@dataclass(frozen=True, eq=False)
class _Solution:
    d: NDArray[np.float64]  # (m+1, h+1, dim) with tau normalized by `scale`
    scale: float
    cost: float
    grad: NDArray[np.float64]


def _taylor_shift(ds: NDArray[np.float64], nd: int, low: int, tau: float) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """End derivatives minus the start Taylor polynomial of degree ``low - 1``.

    Returns the shifted stack and its derivative with respect to ``tau``
    (only the end block depends on it).
    """
    q = np.zeros_like(ds)
    q[:low] = ds[:low]
    for k in range(low):
        q[nd + k] = sum(ds[j] * tau ** (j - k) / math.factorial(j - k) for j in range(k, low))
    dq = np.zeros_like(ds)
    dq[nd : nd + low - 1] = q[nd + 1 : nd + low]
    return ds - q, dq


def _solve(spec: DerivativeSpec, tau: NDArray[np.float64], degree: int, r: int, want_grad: bool = False) -> _Solution:
    m, h, dim = spec.n_segments, spec.h, spec.dim
    nd = h + 1
    # durations are normalized to unit mean; control points do not depend on it
    c = float(np.mean(tau))
    t = tau / c
    G = _reduced_cost(degree, r)
    expo = _order_exponents(degree, r)
    scaled_vals = spec.values * (c ** np.arange(nd))[None, :, None]
    n = (m + 1) * nd
    R = np.zeros((n, n))
    for s in range(m):
        blk = G * t[s] ** expo
        sl = slice(s * nd, s * nd + 2 * nd)
        R[sl, sl] += blk
    flat_fixed = spec.fixed.ravel()
    fi = np.flatnonzero(flat_fixed)
    ui = np.flatnonzero(~flat_fixed)
    d = scaled_vals.reshape(n, dim).copy()
    if ui.size:
        Ruu = R[np.ix_(ui, ui)]
        Ruk = R[np.ix_(ui, fi)]
        sym = Ruu + Ruu.T
        try:
            lu = scipy.linalg.cho_factor(sym)
            rhs = -(Ruk + R[np.ix_(fi, ui)].T) @ d[fi]
            d[ui] = scipy.linalg.cho_solve(lu, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularRuu("free-derivative block is not positive definite", int(np.argmin(tau))) from exc
        if np.linalg.cond(sym) > 1e14:
            raise SingularRuu(f"free-derivative block condition {np.linalg.cond(sym):.3e}", int(np.argmin(tau)))
    cost = 0.0
    grad = np.zeros(m)
    low = min(r, nd)
    for s in range(m):
        # the cost form annihilates polynomials of degree < r; removing the
        # start Taylor polynomial avoids cancellation between large entries
        e, dq = _taylor_shift(d[s * nd : s * nd + 2 * nd], nd, low, t[s])
        W = G * t[s] ** expo
        quad = np.einsum("ad,ab,bd->ab", e, G, e)
        cost += float(np.sum(quad * t[s] ** expo))
        if want_grad:
            grad[s] = float(np.sum(quad * expo * t[s] ** (expo - 1))) - 2.0 * float(np.einsum("ad,ab,bd->", e, W, dq))
    # undo the normalization: cost is homogeneous of degree 1 - 2r in tau
    return _Solution(d.reshape(m + 1, nd, dim), c, cost * c ** (1 - 2 * r), grad * c ** (-2 * r))


def _control_points(d: NDArray[np.float64], tau_normalized: NDArray[np.float64], degree: int) -> NDArray[np.float64]:
    """Hermite control points from end derivatives by explicit end differences.

    ``d^k/dt^k`` at an end equals ``N!/(N-k)! / tau^k`` times the k-th
    forward (start) or backward (end) difference, so the control points
    follow by binomial sums. Zero derivatives give exactly repeated points.
    """
    m = tau_normalized.size
    h = d.shape[1] - 1
    if degree != 2 * h + 1:
        raise InconsistentSpec(f"degree {degree} needs {(degree + 1) // 2} end derivatives, got {h + 1}")
    ctrl = np.empty((m, degree + 1, d.shape[2]))
    for s in range(m):
        tau = tau_normalized[s]
        fwd = [d[s, j] * tau**j / falling(degree, j) for j in range(h + 1)]
        bwd = [d[s + 1, j] * tau**j / falling(degree, j) for j in range(h + 1)]
        for k in range(h + 1):
            ctrl[s, k] = sum(math.comb(k, j) * fwd[j] for j in range(k + 1))
            ctrl[s, degree - k] = sum(math.comb(k, j) * (-1) ** j * bwd[j] for j in range(k + 1))
    return ctrl


def solve_min_jerk(
    spec: DerivativeSpec,
    tau: ArrayLike,
    r: int = DEFAULT_ORDER,
    degree: int = DEFAULT_DEGREE,
) -> CompositeTrajectory:
    """Minimize the summed squared ``r``-th derivative for given durations.

    Free derivatives solve ``(R_uu^T + R_uu) d_u = -(R_ku^T + R_uk) d_k``;
    control points follow from the endpoint map of each segment.

    Raises:
        SingularRuu: the free block is singular for this allocation.
    """
    t = _check_tau(tau, spec.n_segments)
    if degree < 2 * r - 1:
        raise InconsistentSpec(f"degree {degree} too low for derivative order {r}")
    sol = _solve(spec, t, degree, r)
    ctrl = _control_points(sol.d, t / sol.scale, degree)
    return CompositeTrajectory(ctrl, t)


def free_derivatives(spec: DerivativeSpec, tau: ArrayLike, r: int = DEFAULT_ORDER, degree: int = DEFAULT_DEGREE) -> NDArray[np.float64]:
    """Complete derivative table ``(m+1, h+1, dim)`` in units per ``s^k``."""
    t = _check_tau(tau, spec.n_segments)
    sol = _solve(spec, t, degree, r)
    return sol.d / (sol.scale ** np.arange(spec.h + 1))[None, :, None]


def trajectory_from_derivatives(d: ArrayLike, tau: ArrayLike, degree: int = DEFAULT_DEGREE) -> CompositeTrajectory:
    """Control points from a complete derivative table."""
    dd = np.asarray(d, dtype=float)
    if dd.ndim == 2:
        dd = dd[:, :, None]
    t = _check_tau(tau, dd.shape[0] - 1)
    c = float(np.mean(t))
    scaled = dd * (c ** np.arange(dd.shape[1]))[None, :, None]
    return CompositeTrajectory(_control_points(scaled, t / c, degree), t)


def total_cost(spec: DerivativeSpec, tau: ArrayLike, r: int = DEFAULT_ORDER, degree: int = DEFAULT_DEGREE) -> float:
    """Optimal cost for the allocation ``tau`` (free derivatives re-solved)."""
    return _solve(spec, _check_tau(tau, spec.n_segments), degree, r).cost


@dataclass(frozen=True)
class SegmentTimeResult:
    tau: NDArray[np.float64]
    cost: float
    uniform_cost: float
    iterations: int
    stalled: bool


def _tau_from_z(z: NDArray[np.float64], floor: float) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    p = scipy.special.softmax(z)
    return floor + (1.0 - floor * z.size) * p, p


def optimize_segment_times(
    spec: DerivativeSpec,
    r: int = DEFAULT_ORDER,
    degree: int = DEFAULT_DEGREE,
    method: str = "bfgs",
    tau_floor: float = TAU_FLOOR,
    max_iter: int = 2000,
) -> SegmentTimeResult:
    """Durations on the simplex ``sum tau = 1`` minimizing the total cost.

    The simplex is parameterized by a softmax over logits plus the floor and
    the logarithm of the cost is minimized, which keeps the objective well
    scaled when the optimum is orders of magnitude below the uniform cost.
    ``"bfgs"`` and ``"lbfgs"`` use the exact gradient: by the envelope
    argument the derivative of the optimal cost with respect to ``tau_k`` is
    the partial derivative of segment ``k``'s cost with its end derivatives
    held fixed. ``"nelder-mead"`` is derivative-free and suited to a handful
    of segments.

    Warns:
        SolverStall: iteration cap reached; the best iterate is returned.
    """
    m = spec.n_segments
    uniform = np.full(m, 1.0 / m)
    uniform_cost = total_cost(spec, uniform, r, degree)
    if m == 1:
        return SegmentTimeResult(np.ones(1), uniform_cost, uniform_cost, 0, False)
    if tau_floor * m >= 1.0:
        raise InconsistentSpec(f"floor {tau_floor} infeasible for {m} segments")
    ref = max(uniform_cost, 1e-300)

    def fun(z):
        tau, p = _tau_from_z(z, tau_floor)
        sol = _solve(spec, tau, degree, r, want_grad=True)
        cost = max(sol.cost, 1e-300)
        g_tau = sol.grad * (1.0 - tau_floor * m) / cost
        return math.log(cost / ref), p * (g_tau - np.dot(g_tau, p))

    z0 = np.zeros(m)
    if method in ("bfgs", "lbfgs"):
        if method == "bfgs":
            opts = {"maxiter": max_iter, "gtol": 1e-10}
            res = scipy.optimize.minimize(fun, z0, jac=True, method="BFGS", options=opts)
        else:
            opts = {"maxiter": max_iter, "gtol": 1e-10, "ftol": 1e-15}
            res = scipy.optimize.minimize(fun, z0, jac=True, method="L-BFGS-B", options=opts)
        stalled = res.nit >= max_iter
    elif method == "nelder-mead":
        res = scipy.optimize.minimize(
            lambda z: fun(np.append(z, 0.0))[0], z0[:-1], method="Nelder-Mead",
            options={"maxiter": max_iter * m, "xatol": 1e-8, "fatol": 1e-12, "adaptive": True},
        )
        res.x = np.append(res.x, 0.0)
        stalled = not res.success
    else:
        raise ValueError(f"unknown method {method!r}")
    tau, _ = _tau_from_z(res.x, tau_floor)
    cost = total_cost(spec, tau, r, degree)
    if cost > uniform_cost:
        tau, cost = uniform, uniform_cost
    if stalled:
        warnings.warn("segment-time optimization hit its iteration cap", SolverStall, stacklevel=2)
    return SegmentTimeResult(tau / tau.sum(), cost, uniform_cost, int(res.nit), bool(stalled))


@dataclass(frozen=True)
class KinematicLimits:
    """Velocity, acceleration and jerk bounds.

    Tangential limits are in mm/s^k along the path; joint limits apply to
    every prismatic joint in mm/s^k.
    """

    v_max: float
    a_max: float
    j_max: float
    vd_max: float
    ad_max: float
    jd_max: float

    def __post_init__(self):
        for name in ("v_max", "a_max", "j_max", "vd_max", "ad_max", "jd_max"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InfeasibleLimits(f"{name} must be positive, got {value}")

    def tangential(self) -> tuple[float, float, float]:
        return (self.v_max, self.a_max, self.j_max)

    def joint(self) -> tuple[float, float, float]:
        return (self.vd_max, self.ad_max, self.jd_max)


JointMap = Callable[[NDArray[np.float64]], NDArray[np.float64]]
"""Maps times of the unit-time trajectory to joint derivatives ``(n, 3, joints)``."""


@dataclass(frozen=True)
class TimeScaleResult:
    """Outcome of total-time scaling.

    Attributes:
        k: duration multiplier.
        trajectory: the scaled trajectory.
        binding: name of the constraint that sets ``k``.
        peaks: unscaled peak magnitude of each constraint.
        ratios: ``(peak / limit) ** (1 / order)`` per constraint.
        hull_bounds: convex-hull upper bounds of the unscaled tangential peaks.
    """

    k: float
    trajectory: CompositeTrajectory
    binding: str
    peaks: dict
    ratios: dict
    hull_bounds: dict


def _refine_peak(
    f: Callable[[float], float],
    grid: NDArray[np.float64],
    values: NDArray[np.float64],
    band: float = 1e-3,
    max_candidates: int = 16,
) -> float:
    """Golden-section refinement around every grid local maximum near the top."""
    top = float(np.max(values))
    padded = np.concatenate([[-np.inf], values, [-np.inf]])
    is_peak = (values >= padded[:-2]) & (values >= padded[2:]) & (values >= top * (1.0 - band))
    candidates = np.flatnonzero(is_peak)
    candidates = candidates[np.argsort(-values[candidates], kind="stable")][:max_candidates]
    best = top
    for i in candidates:
        lo = grid[max(i - 1, 0)]
        hi = grid[min(i + 1, grid.size - 1)]
        if hi > lo:
            res = scipy.optimize.minimize_scalar(
                lambda x: -f(x), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * max(hi, 1.0)}
            )
            best = max(best, -float(res.fun))
    return best


def _dense_times(traj: CompositeTrajectory, per_segment: int) -> NDArray[np.float64]:
    z = np.linspace(0.0, 1.0, per_segment + 1)[:-1]
    t = (traj.starts[:, None] + traj.durations[:, None] * z[None, :]).ravel()
    return np.append(t, traj.total_time)


def trajectory_peaks(traj: CompositeTrajectory, per_segment: int = 10_000) -> NDArray[np.float64]:
    """Peak ``|d^k/dt^k|`` for ``k = 1, 2, 3`` over all axes, golden-refined."""
    t = _dense_times(traj, per_segment)
    peaks = np.zeros(3)
    for k in (1, 2, 3):
        vals = np.max(np.abs(traj.evaluate(t, k)), axis=-1)
        peaks[k - 1] = _refine_peak(lambda x, k=k: float(np.max(np.abs(traj.evaluate(x, k)))), t, vals)
    return peaks


def time_scale_optimize(
    traj: CompositeTrajectory,
    limits: KinematicLimits,
    joint_map: JointMap | None = None,
    per_segment: int = 10_000,
    joint_per_segment: int = 256,
) -> TimeScaleResult:
    """Smallest uniform time stretch meeting tangential and joint limits.

    Stretching all durations by ``k`` scales the ``n``-th derivative by
    ``k**-n``, so ``k* = max_c (peak_c / limit_c) ** (1 / n_c)``. Peaks
    are located on a dense grid and refined by bounded golden-section
    search around the grid maximum.
    """
    if traj.dim != 1:
        raise InconsistentSpec("time scaling expects a scalar path-length trajectory")
    peaks: dict[str, float] = {}
    ratios: dict[str, float] = {}
    names = ("v", "a", "j")
    tan = trajectory_peaks(traj, per_segment)
    for n, (name, lim) in enumerate(zip(names, limits.tangential()), start=1):
        peaks[f"tangential_{name}"] = float(tan[n - 1])
        ratios[f"tangential_{name}"] = (tan[n - 1] / lim) ** (1.0 / n)
    if joint_map is not None:
        t = _dense_times(traj, joint_per_segment)
        jd = np.asarray(joint_map(t))
        for n, (name, lim) in enumerate(zip(names, limits.joint()), start=1):
            vals = np.max(np.abs(jd[:, n - 1, :]), axis=-1)
            f = lambda x, n=n: float(np.max(np.abs(np.asarray(joint_map(np.array([x])))[0, n - 1])))
            peak = _refine_peak(f, t, vals)
            peaks[f"joint_{name}"] = peak
            ratios[f"joint_{name}"] = (peak / lim) ** (1.0 / n)
    binding = max(ratios, key=ratios.get)
    k = float(ratios[binding])
    if not k > 0:
        raise InfeasibleLimits("trajectory has no motion to scale")
    hull = {}
    N = traj.degree
    for n, name in enumerate(names, start=1):
        Dn = forward_diff_matrix(N, n) * falling(N, n)
        ctrl = np.einsum("ij,mjd->mid", Dn, traj.control_points) / traj.durations[:, None, None] ** n
        hull[f"tangential_{name}"] = float(np.max(np.abs(ctrl)))
    return TimeScaleResult(k, traj.scaled(k), binding, peaks, ratios, hull)


def bisect_time_scale(peaks: dict, limits: KinematicLimits, lo: float = 1e-6, hi: float = 1e6, tol: float = 1e-12) -> float:
    """Smallest ``k`` with every scaled peak within its limit, by bisection."""
    lim = {
        "tangential_v": limits.v_max, "tangential_a": limits.a_max, "tangential_j": limits.j_max,
        "joint_v": limits.vd_max, "joint_a": limits.ad_max, "joint_j": limits.jd_max,
    }

    def feasible(k):
        return all(p / k ** (" vaj".index(name[-1])) <= lim[name] for name, p in peaks.items())

    if not feasible(hi):
        raise InfeasibleLimits("no feasible scale below the search bound")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi
