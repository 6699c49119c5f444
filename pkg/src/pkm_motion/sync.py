"""Monotone piecewise Bezier map ``w(s)`` from path length to orientation parameter.

Each interval ``[s_{k-1}, s_k]`` carries a degree-7 Bezier polynomial in
``sigma = (s - s_{k-1}) / ds_k``. The fit minimizes the integrated squared
third derivative subject to endpoint interpolation, C1-C3 junctions and
nondecreasing control points.

The QP is posed on control-point increments ``delta_i = rho_{i+1} - rho_i``
so that monotonicity becomes the bound ``delta >= 0`` and a primal
active-set method with exact equality-constrained steps applies directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize
from numpy.typing import ArrayLike, NDArray

from .errors import ArcLengthOutOfRange, InconsistentSpec, InfeasibleMonotonicity, OrderTooHigh, SolverStall
from .minjerk import bernstein_basis, cost_matrix, falling, forward_diff_matrix

SYNC_DEGREE = 7
_S_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class PiecewiseBezier:
    """Scalar piecewise Bezier function of path length.

    Attributes:
        breakpoints: ``(m+1,)`` strictly increasing path lengths in mm.
        control_points: ``(m, n+1)`` control values per interval.
        stalled: the active-set iteration hit its cap.
    """

    breakpoints: NDArray[np.float64]
    control_points: NDArray[np.float64]
    stalled: bool = False

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        ctrl = np.atleast_2d(np.asarray(self.control_points, dtype=float))
        if ctrl.shape[0] != bp.size - 1:
            raise InconsistentSpec("one control row per interval is required")
        bp.setflags(write=False)
        ctrl.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "control_points", ctrl)

    @property
    def degree(self) -> int:
        return self.control_points.shape[1] - 1

    @property
    def n_intervals(self) -> int:
        return self.control_points.shape[0]

    def objective(self) -> float:
        """``sum_k integral (w''')^2 ds`` over all intervals."""
        Q = cost_matrix(self.degree, 3)
        ds = np.diff(self.breakpoints)
        # Q annihilates constants; removing the offset keeps flat pieces exactly zero
        c = self.control_points - self.control_points[:, :1]
        return float(np.sum(np.einsum("ki,ij,kj->k", c, Q, c) / ds**5))

    def junction_residuals(self) -> NDArray[np.float64]:
        """Max mismatch of ``d^r w / ds^r`` at interior junctions, ``r = 0..3``."""
        n = self.degree
        ds = np.diff(self.breakpoints)
        res = np.zeros(4)
        for r in range(4):
            D = forward_diff_matrix(n, r) * falling(n, r)
            left = self.control_points[:-1] @ D[-1] / ds[:-1] ** r
            right = self.control_points[1:] @ D[0] / ds[1:] ** r
            if left.size:
                res[r] = np.max(np.abs(left - right))
        return res


def eval_w_of_s(pb: PiecewiseBezier, s: ArrayLike, order: int = 0) -> NDArray[np.float64]:
    """Value or ``order``-th path-length derivative of ``w(s)``.

    Raises:
        ArcLengthOutOfRange: ``s`` outside the breakpoint range.
    """
    if order > 3:
        raise OrderTooHigh("w(s) derivatives are available up to order 3")
    ss = np.asarray(s, dtype=float)
    bp = pb.breakpoints
    slack = _S_SLACK * max(1.0, bp[-1])
    if np.any((ss < bp[0] - slack) | (ss > bp[-1] + slack)):
        raise ArcLengthOutOfRange(f"path length outside [{bp[0]}, {bp[-1]}]")
    flat = np.clip(ss.ravel(), bp[0], bp[-1])
    k = np.clip(np.searchsorted(bp, flat, side="right") - 1, 0, pb.n_intervals - 1)
    ds = bp[k + 1] - bp[k]
    sigma = np.clip((flat - bp[k]) / ds, 0.0, 1.0)
    n = pb.degree
    if order == 0:
        return _eval_increments(pb.control_points[k], sigma).reshape(ss.shape)
    D = forward_diff_matrix(n, order)
    coef = pb.control_points[k] @ D.T
    vals = np.einsum("ni,ni->n", bernstein_basis(n - order, sigma), coef) * falling(n, order) / ds**order
    return vals.reshape(ss.shape)


def _eval_increments(ctrl: NDArray[np.float64], sigma: NDArray[np.float64]) -> NDArray[np.float64]:
    """Bezier values written as the nearer end value plus or minus weighted increments.

    The weights are partial sums of nonnegative basis terms, so flat
    intervals are exact and values never leave ``[c_0, c_n]`` because the
    basis fails to sum to one in floating point.
    """
    B = bernstein_basis(ctrl.shape[1] - 1, sigma)
    inc = np.diff(ctrl, axis=1)
    above = np.cumsum(B[:, ::-1], axis=1)[:, ::-1][:, 1:]
    below = np.cumsum(B, axis=1)[:, :-1]
    left = ctrl[:, 0] + np.einsum("ni,ni->n", inc, above)
    right = ctrl[:, -1] - np.einsum("ni,ni->n", inc, below)
    return np.where(sigma <= 0.5, left, right)


def _build_problem(s, w, pin_ends):
    """Variables, objective and equality rows in increment coordinates."""
    n = SYNC_DEGREE
    m = s.size - 1
    ds = np.diff(s)
    dw = np.diff(w)
    # cumulative-sum map: rho = w_{k-1} + L delta
    L = np.vstack([np.zeros(n), np.tril(np.ones((n, n)))])
    Qj = cost_matrix(n, 3)
    active = dw > 0
    var_of = -np.ones(m, dtype=int)
    var_of[active] = np.arange(active.sum())
    nv = int(active.sum()) * n
    H = np.zeros((nv, nv))
    for k in np.flatnonzero(active):
        sl = slice(var_of[k] * n, var_of[k] * n + n)
        H[sl, sl] = L.T @ (Qj / ds[k] ** 5) @ L
    rows, rhs = [], []

    def deriv_row(k, r, end):
        """Coefficients of ``d^r w/ds^r`` at an interval end over its increments."""
        D = forward_diff_matrix(n, r) * falling(n, r) / ds[k] ** r
        return (D[-1] if end else D[0]) @ L

    for k in np.flatnonzero(active):
        row = np.zeros(nv)
        row[var_of[k] * n : var_of[k] * n + n] = 1.0
        rows.append(row)
        rhs.append(dw[k])
    for k in range(m - 1):
        for r in (1, 2, 3):
            row = np.zeros(nv)
            if active[k]:
                row[var_of[k] * n : var_of[k] * n + n] += deriv_row(k, r, True)
            if active[k + 1]:
                row[var_of[k + 1] * n : var_of[k + 1] * n + n] -= deriv_row(k + 1, r, False)
            if np.any(row):
                rows.append(row)
                rhs.append(0.0)
    if pin_ends:
        for k, end in ((0, False), (m - 1, True)):
            if active[k]:
                for r in (1, 2, 3):
                    row = np.zeros(nv)
                    row[var_of[k] * n : var_of[k] * n + n] = deriv_row(k, r, end)
                    rows.append(row)
                    rhs.append(0.0)
    A = np.array(rows) if rows else np.zeros((0, nv))
    return H, A, np.array(rhs), active, var_of


def _forced_zero(active, pin_ends):
    """Increments that must vanish: ends adjoining a constant interval or a pinned end.

    Zero first to third derivatives at an interval end force the three
    increments next to that end to zero.
    """
    n = SYNC_DEGREE
    m = active.size
    forced = []
    for k in np.flatnonzero(active):
        f = np.zeros(n, dtype=bool)
        left = (k == 0 and pin_ends) or (k > 0 and not active[k - 1])
        right = (k == m - 1 and pin_ends) or (k < m - 1 and not active[k + 1])
        if left:
            f[:3] = True
        if right:
            f[-3:] = True
        forced.append(f)
    return np.concatenate(forced) if forced else np.zeros(0, dtype=bool)


def _null_space(M: NDArray[np.float64], n: int) -> NDArray[np.float64]:
    if M.shape[0] == 0:
        return np.eye(n)
    _, sv, vt = np.linalg.svd(M)
    rank = int(np.sum(sv > max(M.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)))
    return vt[rank:].T


def _subspace_min(H, x, N):
    """Step to the minimizer of the quadratic over ``x + span(N)``."""
    if N.shape[1] == 0:
        return np.zeros_like(x)
    Hn = N.T @ H @ N
    y = scipy.linalg.solve(Hn, -(N.T @ (H @ x)), assume_a="sym")
    return N @ y


def _interior_start(A, b, cap):
    """Feasible point maximizing the smallest increment (linear program)."""
    nv = A.shape[1]
    c = np.zeros(nv + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-np.eye(nv), np.ones((nv, 1))])
    res = scipy.optimize.linprog(
        c, A_ub=A_ub, b_ub=np.zeros(nv), A_eq=np.hstack([A, np.zeros((A.shape[0], 1))]), b_eq=b,
        bounds=[(0, None)] * nv + [(0, cap)], method="highs",
    )
    if res.status != 0:
        raise InfeasibleMonotonicity(f"no monotone map satisfies the junction conditions ({res.message})")
    return np.maximum(res.x[:nv], 0.0)


def _active_set(H, A, b, max_iter, tol):
    """Primal active-set iteration on ``min 0.5 x'Hx`` with ``Ax = b``, ``x >= 0``."""
    nv = H.shape[0]
    x_p = scipy.linalg.lstsq(A, b)[0] if A.shape[0] else np.zeros(nv)
    x = x_p + _subspace_min(H, x_p, _null_space(A, nv))
    if np.min(x) >= -tol * np.max(np.abs(x)):
        return np.maximum(x, 0.0), False
    x = _interior_start(A, b, float(np.max(b)) if b.size else 1.0)
    xs = max(float(np.max(x)), 1e-300)
    eye = np.eye(nv)
    rank_a = np.linalg.matrix_rank(A) if A.shape[0] else 0
    working = np.zeros(nv, dtype=bool)
    for i in np.flatnonzero(x <= tol * xs):
        x[i] = 0.0
        trial = working.copy()
        trial[i] = True
        if np.linalg.matrix_rank(np.vstack([A, eye[trial]])) == rank_a + int(trial.sum()):
            working = trial
    settled = False
    for _ in range(max_iter):
        if not settled:
            p = _subspace_min(H, x, _null_space(np.vstack([A, eye[working]]), nv))
            if np.max(np.abs(p)) > tol * xs:
                neg = (~working) & (p < 0)
                alpha, block = 1.0, -1
                if neg.any():
                    idx = np.flatnonzero(neg)
                    ratios = -x[idx] / p[idx]
                    j = int(np.argmin(ratios))
                    if ratios[j] < 1.0:
                        alpha, block = float(ratios[j]), int(idx[j])
                x = x + alpha * p
                if block >= 0:
                    x[block] = 0.0
                    working[block] = True
                else:
                    settled = True
                continue
        settled = False
        if not working.any():
            return x, False
        grad = H @ x
        C = np.vstack([A, eye[working]])
        lam = scipy.linalg.lstsq(C.T, grad)[0][A.shape[0]:]
        j = int(np.argmin(lam))
        if lam[j] >= -tol * max(float(np.max(np.abs(grad))), 1e-300):
            return x, False
        working[np.flatnonzero(working)[j]] = False
    return x, True


def fit_w_of_s(
    s: ArrayLike,
    w: ArrayLike,
    pin_ends: bool = False,
    max_iter: int | None = None,
    tol: float = 1e-10,
) -> PiecewiseBezier:
    """Jerk-minimal monotone degree-7 map through ``(s_k, w_k)``.

    The equality-constrained optimum is tried first; if it is not monotone
    a primal active-set iteration over the increment bounds starts from an
    interior point found by linear programming.

    Args:
        s: strictly increasing path lengths.
        w: nondecreasing parameters, normally from 0 to 1.
        pin_ends: also force the first three derivatives to zero at both ends.
        max_iter: active-set iteration cap.
        tol: relative tolerance for zero steps and multipliers.

    Raises:
        InfeasibleMonotonicity: ``w`` decreases somewhere.

    Warns:
        SolverStall: iteration cap reached; the last feasible iterate is kept.
    """
    ss = np.asarray(s, dtype=float)
    ww = np.asarray(w, dtype=float)
    if ss.ndim != 1 or ss.shape != ww.shape or ss.size < 2:
        raise InconsistentSpec("s and w must be equal-length vectors with at least two entries")
    if np.any(np.diff(ss) <= 0):
        raise InconsistentSpec("breakpoints must be strictly increasing")
    dw = np.diff(ww)
    if np.any(dw < 0):
        k = int(np.flatnonzero(dw < 0)[0])
        raise InfeasibleMonotonicity(f"w decreases between data points {k} and {k + 1}")
    n = SYNC_DEGREE
    # the minimizer is invariant to a uniform scaling of s
    H, A, b, active, var_of = _build_problem(ss / np.mean(np.diff(ss)), ww, pin_ends)
    nv = H.shape[0]
    x = np.zeros(nv)
    stalled = False
    if ss.size == 2 and not pin_ends:
        # every map w = sigma + c sigma (1 - sigma), |c| <= 1, has zero jerk;
        # the linear one is chosen
        x[:] = dw[0] / n
    elif nv:
        keep = ~_forced_zero(active, pin_ends)
        Ak = A[:, keep]
        rows = np.any(Ak != 0.0, axis=1)
        cap = max_iter if max_iter is not None else 20 * nv + 100
        xk, stalled = _active_set(H[np.ix_(keep, keep)], Ak[rows], b[rows], cap, tol)
        x[keep] = np.maximum(xk, 0.0)
        if stalled:
            warnings.warn("active-set iteration cap reached; returning the last feasible iterate", SolverStall, stacklevel=2)
    ctrl = np.empty((ss.size - 1, n + 1))
    for k in range(ss.size - 1):
        if active[k]:
            inc = x[var_of[k] * n : var_of[k] * n + n]
            ctrl[k] = ww[k] + np.concatenate([[0.0], np.cumsum(inc)])
            ctrl[k] = np.minimum(ctrl[k], ww[k + 1])
            ctrl[k, -1] = ww[k + 1]
        else:
            ctrl[k] = ww[k]
    return PiecewiseBezier(ss, ctrl, stalled)


def kkt_residual(pb: PiecewiseBezier, pin_ends: bool = False) -> float:
    """Relative norm of the projected gradient at a fitted map.

    The distance from the objective gradient to the cone spanned by the
    equality rows and the active bound normals, relative to the gradient
    scale ``||H|| ||x||``, which stays meaningful when the optimum has zero
    cost. It is zero exactly at a KKT point.
    """
    s = pb.breakpoints
    w = np.concatenate([pb.control_points[:, 0], pb.control_points[-1:, -1]])
    H, A, _, active, _ = _build_problem(s / np.mean(np.diff(s)), w, pin_ends)
    if not active.any():
        return 0.0
    x = np.concatenate([np.diff(pb.control_points[k]) for k in np.flatnonzero(active)])
    zero = x <= 1e-12 * max(float(np.max(np.abs(x))), 1e-300)
    grad = H @ x
    # distance from the gradient to the cone {A' mu + E' lambda : lambda >= 0}
    C = np.vstack([A, np.eye(x.size)[zero]]).T
    lower = np.concatenate([np.full(A.shape[0], -np.inf), np.zeros(int(zero.sum()))])
    fit = scipy.optimize.lsq_linear(C, grad, bounds=(lower, np.inf), method="bvls", tol=1e-14)
    scale = max(float(np.linalg.norm(H, 2) * np.linalg.norm(x)), 1e-300)
    return float(np.linalg.norm(C @ fit.x - grad) / scale)
