"""Matrix-form B-splines: interpolatory fitting, derivatives and arc length.

Basis rows are built span by span as a product of sparse ``k x (k+1)``
blending matrices (two nonzeros per row), which is algebraically the same
as the Cox-de Boor recursion.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import (
    DuplicateConsecutiveWaypoint,
    IllConditionedWarning,
    OrderTooHigh,
    ParamOutOfRange,
    QuadratureDepthExceeded,
    SingularCollocationMatrix,
    TooFewWaypoints,
)

_PARAM_SLACK = 1e-12
_COND_WARN = 1e12
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


@dataclass(frozen=True, eq=False)
class BSplineCurve:
    """Clamped B-spline ``C(u) = N_p(u) c`` on ``u in [0, 1]``.

    Attributes:
        degree: polynomial degree ``p``.
        knots: clamped, nondecreasing knot vector of length ``n + p + 1``.
        control_points: ``(n, D)`` array of control points.
    """

    degree: int
    knots: NDArray[np.float64]
    control_points: NDArray[np.float64]

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        ctrl = np.asarray(self.control_points, dtype=float)
        if ctrl.ndim == 1:
            ctrl = ctrl[:, None]
        p = int(self.degree)
        if p < 0:
            raise ValueError("degree must be nonnegative")
        if knots.size != ctrl.shape[0] + p + 1:
            raise ValueError(
                f"knot count {knots.size} != control points {ctrl.shape[0]} + degree {p} + 1"
            )
        if np.any(np.diff(knots) < 0):
            raise ValueError("knot vector must be nondecreasing")
        if p > 0 and not (np.all(knots[: p + 1] == knots[0]) and np.all(knots[-p - 1:] == knots[-1])):
            raise ValueError("knot vector must be clamped")
        knots.setflags(write=False)
        ctrl.setflags(write=False)
        object.__setattr__(self, "degree", p)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "control_points", ctrl)

    @property
    def dim(self) -> int:
        return self.control_points.shape[1]

    @property
    def n_ctrl(self) -> int:
        return self.control_points.shape[0]

    @cached_property
    def _derivative_chain(self) -> list[BSplineCurve]:
        chain = [self]
        for _ in range(self.degree):
            chain.append(_differentiate(chain[-1]))
        return chain

    def derivative_curve(self, order: int) -> BSplineCurve:
        """Return the B-spline of the ``order``-th parametric derivative."""
        if order > self.degree:
            raise OrderTooHigh(f"order {order} exceeds degree {self.degree}")
        return self._derivative_chain[order]

    def basis(self, u: ArrayLike) -> NDArray[np.float64]:
        """Dense basis rows, shape ``(len(u), n)`` (or ``(n,)`` for scalar u)."""
        scalar = np.ndim(u) == 0
        uu = _check_params(u, self.knots)
        span, local = _local_basis(self.knots, self.degree, uu)
        rows = np.zeros((uu.size, self.n_ctrl))
        cols = span[:, None] - self.degree + np.arange(self.degree + 1)
        np.put_along_axis(rows, cols, local, axis=1)
        return rows[0] if scalar else rows

    def evaluate(self, u: ArrayLike, order: int = 0) -> NDArray[np.float64]:
        """Evaluate ``d^order C / du^order``; returns ``(D,)`` or ``(len(u), D)``."""
        if order < 0:
            raise ValueError("order must be nonnegative")
        if order > self.degree:
            scalar = np.ndim(u) == 0
            _check_params(u, self.knots)
            shape = (self.dim,) if scalar else (np.size(u), self.dim)
            return np.zeros(shape)
        curve = self._derivative_chain[order]
        scalar = np.ndim(u) == 0
        uu = _check_params(u, self.knots)
        span, local = _local_basis(curve.knots, curve.degree, uu)
        idx = span[:, None] - curve.degree + np.arange(curve.degree + 1)
        out = np.einsum("nk,nkd->nd", local, curve.control_points[idx])
        return out[0] if scalar else out

    __call__ = evaluate

    def speed(self, u: ArrayLike) -> NDArray[np.float64]:
        """``||C'(u)||``."""
        return np.linalg.norm(self.evaluate(u, 1), axis=-1)

    def reversed(self) -> BSplineCurve:
        """Same point set traced from ``u=1`` to ``u=0``."""
        return BSplineCurve(self.degree, 1.0 - self.knots[::-1], self.control_points[::-1])


def _differentiate(curve: BSplineCurve) -> BSplineCurve:
    p, U, c = curve.degree, curve.knots, curve.control_points
    denom = U[p + 1: p + c.shape[0]] - U[1: c.shape[0]]
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(denom > 0, p / np.where(denom > 0, denom, 1.0), 0.0)
    dc = (c[1:] - c[:-1]) * scale[:, None]
    return BSplineCurve(p - 1, U[1:-1], dc)


def _check_params(u: ArrayLike, knots: NDArray[np.float64]) -> NDArray[np.float64]:
    uu = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
    lo, hi = knots[0], knots[-1]
    if np.any(~np.isfinite(uu)) or np.any(uu < lo - _PARAM_SLACK) or np.any(uu > hi + _PARAM_SLACK):
        bad = uu[(~np.isfinite(uu)) | (uu < lo - _PARAM_SLACK) | (uu > hi + _PARAM_SLACK)][0]
        raise ParamOutOfRange(f"parameter {bad!r} outside [{lo}, {hi}]")
    return np.clip(uu, lo, hi)


def find_span(knots: NDArray[np.float64], degree: int, u: NDArray[np.float64]) -> NDArray[np.intp]:
    """Index ``i`` with ``knots[i] <= u < knots[i+1]``; ``u = 1`` maps to the last nonempty span."""
    n = knots.size - degree - 1
    span = np.searchsorted(knots, u, side="right") - 1
    return np.clip(span, degree, n - 1)


def _local_basis(knots: NDArray[np.float64], degree: int, u: NDArray[np.float64]):
    """Nonzero basis values on each sample's span via the blending-matrix product."""
    span = find_span(knots, degree, u)
    rows = np.ones((u.size, 1))
    for k in range(1, degree + 1):
        # v_{k,l} for l = i-k+1 .. i; rows of the k x (k+1) blending matrix
        l = span[:, None] - k + 1 + np.arange(k)
        lo, hi = knots[l], knots[l + k]
        width = hi - lo
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(width > 0, (u[:, None] - lo) / np.where(width > 0, width, 1.0), 0.0)
        nxt = np.zeros((u.size, k + 1))
        nxt[:, :k] += rows * (1.0 - v)
        nxt[:, 1:] += rows * v
        rows = nxt
    return span, rows


def centripetal_params(points: ArrayLike) -> NDArray[np.float64]:
    """Centripetal parameters: increments proportional to sqrt of chord lengths."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] < 2:
        raise TooFewWaypoints("centripetal parameterization needs at least 2 points")
    chords = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return params_from_distances(chords)


def params_from_distances(distances: ArrayLike) -> NDArray[np.float64]:
    """Cumulative sqrt-distance parameters normalized onto ``[0, 1]``."""
    d = np.asarray(distances, dtype=float)
    zero = np.flatnonzero(d <= 0.0)
    if zero.size:
        raise DuplicateConsecutiveWaypoint(
            f"waypoints {zero[0]} and {zero[0] + 1} coincide (zero chord length)"
        )
    root = np.sqrt(d)
    params = np.concatenate([[0.0], np.cumsum(root) / root.sum()])
    params[-1] = 1.0
    return params


def averaged_knots(params: ArrayLike, degree: int) -> NDArray[np.float64]:
    """Clamped knot vector whose interior knots average ``degree`` consecutive params."""
    ub = np.asarray(params, dtype=float)
    N = ub.size - 1
    p = int(degree)
    if N < p:
        raise TooFewWaypoints(f"{N + 1} parameters cannot support degree {p}")
    knots = np.concatenate([np.zeros(p + 1), np.empty(N - p), np.ones(p + 1)])
    for j in range(1, N - p + 1):
        knots[j + p] = ub[j: j + p].mean()
    return knots


def fit_interpolating_spline(
    points: ArrayLike,
    degree: int = 5,
    params: ArrayLike | None = None,
) -> tuple[BSplineCurve, NDArray[np.float64]]:
    """Fit a B-spline passing through every point.

    Args:
        points: ``(N+1, D)`` data points.
        degree: spline degree (5 keeps jerk continuous).
        params: optional precomputed parameters; centripetal when omitted.

    Returns:
        The interpolating curve and the parameter assigned to each point.

    Raises:
        TooFewWaypoints: fewer than ``degree + 1`` points.
        SingularCollocationMatrix: the collocation system cannot be solved.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if degree < 1:
        raise ValueError("degree must be at least 1")
    if pts.shape[0] < degree + 1:
        raise TooFewWaypoints(f"{pts.shape[0]} points cannot support degree {degree}")
    ub = centripetal_params(pts) if params is None else np.asarray(params, dtype=float)
    if ub.size != pts.shape[0]:
        raise ValueError("params and points differ in length")
    knots = averaged_knots(ub, degree)
    n = pts.shape[0]
    # placeholder control points only to reuse the basis machinery
    shell = BSplineCurve(degree, knots, np.zeros((n, 1)))
    phi = shell.basis(ub)
    cond = np.linalg.cond(phi)
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise SingularCollocationMatrix("collocation matrix is rank deficient", cond)
    if cond > _COND_WARN:
        warnings.warn(f"collocation matrix condition {cond:.3e}", IllConditionedWarning, stacklevel=2)
    ctrl = np.linalg.solve(phi, pts)
    return BSplineCurve(degree, knots, ctrl), ub


@dataclass(frozen=True, eq=False)
class ArcLengthTable:
    """Cumulative arc length ``s_j`` at curve parameters ``u*_j``."""

    params: NDArray[np.float64]
    cum_lengths: NDArray[np.float64]
    tolerance: float = field(default=float("nan"))

    @property
    def total_length(self) -> float:
        return float(self.cum_lengths[-1])

    def __len__(self) -> int:
        return self.params.size


def _gauss_length(curve: BSplineCurve, a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    a = np.atleast_1d(a)
    b = np.atleast_1d(b)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    speed = curve.speed(nodes.ravel()).reshape(nodes.shape)
    return half * (speed @ _GL_WEIGHTS)


def arc_length_table(
    curve: BSplineCurve,
    tolerance: float = 1e-8,
    max_depth: int = 32,
    min_depth: int = 0,
) -> ArcLengthTable:
    """Adaptive Simpson integration of ``||C'(u)||`` over each knot span.

    Every accepted leaf interval contributes one table row at its right end.
    The per-call tolerance halves at each recursion level and a leaf is
    accepted when ``|S_whole - S_halves| / 15 <= tol``. ``min_depth`` forces
    that many bisection levels in every knot span, which densifies the table
    where the integrand is easy.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    breaks = np.unique(curve.knots)
    params = [0.0]
    lengths = [0.0]

    def speed(u: float) -> float:
        return float(np.linalg.norm(curve.evaluate(u, 1)))

    def simpson(a, fa, b, fb):
        m = 0.5 * (a + b)
        fm = speed(m)
        return m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, fa, b, fb, m, fm, whole, tol, depth):
        lm, flm, left = simpson(a, fa, m, fm)
        rm, frm, right = simpson(m, fm, b, fb)
        delta = left + right - whole
        if depth >= min_depth and abs(delta) <= 15.0 * tol:
            params.append(b)
            lengths.append(lengths[-1] + left + right + delta / 15.0)
            return
        if depth >= max_depth:
            raise QuadratureDepthExceeded(
                f"depth {max_depth} reached on [{a:.6g}, {b:.6g}] with error {abs(delta) / 15:.3e}"
            )
        recurse(a, fa, m, fm, lm, flm, left, tol / 2.0, depth + 1)
        recurse(m, fm, b, fb, rm, frm, right, tol / 2.0, depth + 1)

    for a, b in zip(breaks[:-1], breaks[1:]):
        fa, fb = speed(a), speed(b)
        m, fm, whole = simpson(a, fa, b, fb)
        recurse(a, fa, b, fb, m, fm, whole, tolerance, 0)

    u = np.array(params)
    s = np.array(lengths)
    u[-1] = 1.0
    return ArcLengthTable(u, s, tolerance)


def arc_length_at(curve: BSplineCurve, table: ArcLengthTable, u: ArrayLike) -> NDArray[np.float64]:
    """Arc length from 0 to ``u`` using the table plus a Gauss-Legendre remainder."""
    uu = np.atleast_1d(np.asarray(u, dtype=float))
    j = np.clip(np.searchsorted(table.params, uu, side="right") - 1, 0, len(table) - 1)
    base = table.params[j]
    s = table.cum_lengths[j] + _gauss_length(curve, base, uu)
    return s if np.ndim(u) else s[0]


def param_at_length(
    curve: BSplineCurve, table: ArcLengthTable, s: ArrayLike, tol: float = 1e-14, max_iter: int = 50
) -> NDArray[np.float64]:
    """Invert the arc-length map by safeguarded Newton iteration."""
    ss = np.atleast_1d(np.asarray(s, dtype=float))
    total = table.total_length
    ss = np.clip(ss, 0.0, total)
    j = np.clip(np.searchsorted(table.cum_lengths, ss, side="right") - 1, 0, len(table) - 2)
    lo = table.params[j].copy()
    hi = table.params[j + 1].copy()
    s_lo, s_hi = table.cum_lengths[j], table.cum_lengths[j + 1]
    frac = np.where(s_hi > s_lo, (ss - s_lo) / np.where(s_hi > s_lo, s_hi - s_lo, 1.0), 0.0)
    u = lo + frac * (hi - lo)
    for _ in range(max_iter):
        f = table.cum_lengths[j] + _gauss_length(curve, table.params[j], u) - ss
        lo = np.where(f < 0, u, lo)
        hi = np.where(f > 0, u, hi)
        g = curve.speed(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(g > 0, f / g, 0.0)
        nu = u - step
        outside = (nu <= lo) | (nu >= hi)
        nu = np.where(outside, 0.5 * (lo + hi), nu)
        done = np.abs(nu - u) <= tol
        u = nu
        if np.all(done):
            break
    u = np.clip(u, 0.0, 1.0)
    u = np.where(ss <= 0.0, 0.0, np.where(ss >= total, 1.0, u))
    return u if np.ndim(s) else u[0]


def polyline_length(curve: BSplineCurve, samples: int) -> float:
    """Length of the polyline through ``samples`` uniformly spaced parameters."""
    u = np.linspace(0.0, 1.0, samples)
    total = 0.0
    chunk = 200_000
    prev = None
    for start in range(0, samples, chunk):
        pts = curve.evaluate(u[start: start + chunk])
        if prev is not None:
            pts = np.vstack([prev, pts])
        total += float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
        prev = pts[-1:]
    return total
