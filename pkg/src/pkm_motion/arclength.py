"""Modifier polynomials: the curve parameter as a C3 function of arc length.

The map ``u(s)`` is approximated by ninth-degree polynomials in the
normalized arc length of each piece. Each piece is a least-squares fit to
the arc-length table, with value and first three derivatives pinned at
both ends to the exact inverse-arc-length derivatives of the curve.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .bspline import ArcLengthTable, BSplineCurve
from .errors import (
    ArcLengthOutOfRange,
    OrderTooHigh,
    RankDeficientKKT,
    SingularParameterization,
    UnreachableTolerance,
)

POLY_DEGREE = 9
N_BOUNDARY = 4  # value plus three derivatives at each end
_SPEED_EPS = 1e-12
_S_SLACK = 1e-9


def inverse_arclength_derivatives(curve: BSplineCurve, u: ArrayLike, order: int) -> NDArray[np.float64]:
    """``d^order u / d s^order`` of the inverse arc-length map at parameter ``u``.

    With ``g(u) = ||C'(u)||`` the relations are ``u' = 1/g``,
    ``u'' = -g_u / g^3`` and ``u''' = (3 g_u^2 - g g_uu) / g^5``.
    """
    if order > 3:
        raise OrderTooHigh("inverse arc-length derivatives are available up to order 3")
    return _inverse_derivs(curve, u)[order]


def _inverse_derivs(curve: BSplineCurve, u: ArrayLike) -> NDArray[np.float64]:
    """Stack ``[u, u', u'', u''']`` (first axis) for parameters ``u``."""
    uu = np.asarray(u, dtype=float)
    d1 = curve.evaluate(uu, 1)
    d2 = curve.evaluate(uu, 2)
    d3 = curve.evaluate(uu, 3)
    g = np.linalg.norm(d1, axis=-1)
    if np.any(g < _SPEED_EPS):
        raise SingularParameterization(f"curve speed {np.min(g):.3e} below {_SPEED_EPS}")
    c12 = np.sum(d1 * d2, axis=-1)
    g1 = c12 / g
    g2 = (np.sum(d2 * d2, axis=-1) + np.sum(d1 * d3, axis=-1)) / g - c12**2 / g**3
    return np.stack([uu, 1.0 / g, -g1 / g**3, (3.0 * g1**2 - g * g2) / g**5])


def _falling(n: int, r: int) -> int:
    return math.perm(n, r) if n >= r else 0


def _boundary_rows(degree: int = POLY_DEGREE) -> NDArray[np.float64]:
    """Rows mapping coefficients to ``d^r u_hat / d sigma^r`` at sigma = 0 and sigma = 1."""
    omega = np.zeros((2 * N_BOUNDARY, degree + 1))
    for r in range(N_BOUNDARY):
        omega[r, r] = math.factorial(r)
        for n in range(r, degree + 1):
            omega[N_BOUNDARY + r, n] = _falling(n, r)
    return omega


@dataclass(frozen=True, eq=False)
class ModifierPolySegment:
    """One ninth-degree piece ``u_hat(sigma) = sum a_i sigma^i`` on ``[s_start, s_end]``."""

    coefficients: NDArray[np.float64]
    s_start: float
    s_end: float
    mse: float = 0.0
    n_samples: int = 0
    flagged: bool = False

    @property
    def span_scale(self) -> float:
        return 1.0 / (self.s_end - self.s_start)

    def evaluate_sigma(self, sigma: ArrayLike, order: int = 0) -> NDArray[np.float64]:
        return _poly_derivative(self.coefficients, np.asarray(sigma, dtype=float), order)


def _poly_derivative(coeffs: NDArray[np.float64], x: NDArray[np.float64], order: int) -> NDArray[np.float64]:
    deg = coeffs.shape[-1] - 1
    if order > deg:
        return np.zeros_like(x)
    n = np.arange(order, deg + 1)
    fall = np.array([_falling(int(k), order) for k in n], dtype=float)
    c = coeffs[..., order:] * fall
    # Horner, highest power first
    out = np.zeros_like(x) + c[..., -1]
    for k in range(c.shape[-1] - 2, -1, -1):
        out = out * x + c[..., k]
    return out


def fit_segment(
    sigma: ArrayLike,
    u_star: ArrayLike,
    eta_start: ArrayLike,
    eta_end: ArrayLike,
    method: str = "elimination",
) -> tuple[NDArray[np.float64], float]:
    """Equality-constrained least-squares fit of one modifier polynomial.

    Args:
        sigma: normalized arc lengths in ``[0, 1]``.
        u_star: curve parameters at ``sigma``.
        eta_start: ``[u, du/dsigma, d2u/dsigma2, d3u/dsigma3]`` at sigma = 0.
        eta_end: the same at sigma = 1.
        method: ``"elimination"`` (constraints eliminated in Bernstein
            coordinates) or ``"kkt"`` (pivoted LDL^T of the bordered system).
            Both solve the same optimality conditions; elimination avoids
            forming ``Phi^T Phi``, whose condition number is near 1e13.

    Returns:
        Coefficients ``a_0..a_9`` and the mean squared error over the samples.

    Raises:
        RankDeficientKKT: duplicate samples or inconsistent constraints.
    """
    sig = np.asarray(sigma, dtype=float)
    y = np.asarray(u_star, dtype=float)
    if sig.size < POLY_DEGREE + 1:
        raise RankDeficientKKT(f"{sig.size} samples; at least {POLY_DEGREE + 1} required")
    if np.unique(sig).size < sig.size:
        raise RankDeficientKKT("duplicate normalized arc-length samples")
    phi = np.vander(sig, POLY_DEGREE + 1, increasing=True)
    omega = _boundary_rows()
    eta = np.concatenate([np.asarray(eta_start, float), np.asarray(eta_end, float)])
    if method == "elimination":
        a = _solve_elimination(sig, y, eta)
    elif method == "kkt":
        a = _solve_kkt(phi, y, omega, eta)
    else:
        raise ValueError(f"unknown method {method!r}")
    resid = y - phi @ a
    return a, float(np.mean(resid**2))


def _solve_elimination(sig, y, eta):
    """Eliminate the constraints in Bernstein coordinates, then convert to monomials.

    The r-th derivative at an end involves only the r+1 Bernstein
    coefficients nearest that end, so the 8 boundary conditions fix
    ``beta_0..beta_3`` and ``beta_6..beta_9`` by substitution; the two
    interior coefficients come from a small, well-conditioned least squares.
    """
    n = POLY_DEGREE
    beta = np.zeros(n + 1)
    for r in range(N_BOUNDARY):
        diff = eta[r] / _falling(n, r)
        beta[r] = diff - sum(math.comb(r, j) * (-1) ** (r - j) * beta[j] for j in range(r))
    for r in range(N_BOUNDARY):
        back = eta[N_BOUNDARY + r] / _falling(n, r)
        rest = sum(math.comb(r, j) * (-1) ** j * beta[n - j] for j in range(r))
        beta[n - r] = (-1) ** r * (back - rest)
    free = np.arange(N_BOUNDARY, n + 1 - N_BOUNDARY)
    basis = _bernstein_matrix(sig, n)
    fixed = np.setdiff1d(np.arange(n + 1), free)
    target = y - basis[:, fixed] @ beta[fixed]
    sol, _, rank, _ = np.linalg.lstsq(basis[:, free], target, rcond=None)
    if rank < free.size:
        raise RankDeficientKKT("samples do not determine the free coefficients")
    beta[free] = sol
    return _BERNSTEIN_TO_MONOMIAL @ beta


def _bernstein_matrix(x, n):
    i = np.arange(n + 1)
    comb = np.array([math.comb(n, k) for k in i], dtype=float)
    return comb * x[:, None] ** i * (1.0 - x[:, None]) ** (n - i)


def _bernstein_to_monomial(n):
    m = np.zeros((n + 1, n + 1))
    for k in range(n + 1):
        for i in range(k + 1):
            m[k, i] = math.comb(n, k) * math.comb(k, i) * (-1) ** (k - i)
    return m


_BERNSTEIN_TO_MONOMIAL = _bernstein_to_monomial(POLY_DEGREE)


def _solve_kkt(phi, y, omega, eta, refine: int = 2):
    n, m = phi.shape[1], omega.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = phi.T @ phi
    kkt[:n, n:] = omega.T
    kkt[n:, :n] = omega
    rhs = np.concatenate([phi.T @ y, eta])
    lu, d, perm = scipy.linalg.ldl(kkt, lower=True)
    if np.any(np.abs(np.linalg.eigvalsh(d)) < np.finfo(float).eps * np.abs(kkt).max()):
        raise RankDeficientKKT("bordered least-squares system is singular")
    tri = lu[perm]

    def solve(b):
        z = scipy.linalg.solve_triangular(tri, b[perm], lower=True, unit_diagonal=True)
        w = np.linalg.solve(d, z)
        x = np.empty_like(b)
        x[perm] = scipy.linalg.solve_triangular(tri.T, w, lower=False, unit_diagonal=True)
        return x

    x = solve(rhs)
    for _ in range(refine):
        x = x + solve(rhs - kkt @ x)
    return x[:n]


@dataclass(frozen=True, eq=False)
class ModifierPolySet:
    """Contiguous modifier polynomials covering ``[0, S_total]``."""

    segments: tuple[ModifierPolySegment, ...]
    tolerance: float

    def __post_init__(self):
        starts = np.array([seg.s_start for seg in self.segments])
        ends = np.array([seg.s_end for seg in self.segments])
        coeffs = np.array([seg.coefficients for seg in self.segments])
        for arr in (starts, ends, coeffs):
            arr.setflags(write=False)
        object.__setattr__(self, "_starts", starts)
        object.__setattr__(self, "_ends", ends)
        object.__setattr__(self, "_coeffs", coeffs)

    @property
    def total_length(self) -> float:
        return float(self._ends[-1])

    @property
    def breakpoints(self) -> NDArray[np.float64]:
        return np.append(self._starts, self._ends[-1])

    @property
    def flagged(self) -> bool:
        return any(seg.flagged for seg in self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def locate(self, s: NDArray[np.float64]) -> NDArray[np.intp]:
        return np.clip(np.searchsorted(self._starts, s, side="right") - 1, 0, len(self.segments) - 1)

    def evaluate(self, s: ArrayLike, order: int = 0) -> NDArray[np.float64]:
        """``d^order u / d s^order`` at arc lengths ``s``."""
        if order > 3:
            raise OrderTooHigh("modifier polynomials are C3; order must be <= 3")
        ss = np.asarray(s, dtype=float)
        total = self.total_length
        if np.any(ss < -_S_SLACK * max(1.0, total)) or np.any(ss > total * (1 + _S_SLACK) + _S_SLACK):
            raise ArcLengthOutOfRange(f"arc length outside [0, {total}]")
        ss = np.clip(ss, 0.0, total)
        k = self.locate(ss)
        width = self._ends[k] - self._starts[k]
        sigma = (ss - self._starts[k]) / width
        out = _poly_derivative(self._coeffs[k], sigma, order) / width**order
        if order == 0:
            # the ends are pinned exactly; Horner rounding would leave ~1e-14
            out = np.where(ss <= 0.0, 0.0, np.where(ss >= total, 1.0, np.clip(out, 0.0, 1.0)))
        return out


def eval_u_of_s(mod: ModifierPolySet, s: ArrayLike, order: int = 0) -> NDArray[np.float64]:
    return mod.evaluate(s, order)


def fit_modifier_polynomials(
    table: ArcLengthTable,
    curve: BSplineCurve,
    mse_tolerance: float = 1e-10,
) -> ModifierPolySet:
    """Recursive fit-and-split over the arc-length table.

    A single polynomial is fitted to all rows; while its MSE exceeds the
    tolerance, the rows are split into two halves sharing the middle row
    (left half receives the extra interval) and each half is refitted.
    Splitting stops once a half would hold fewer than ``degree + 1`` rows;
    such segments are kept with ``flagged=True``.
    """
    if not mse_tolerance > 0:
        raise ValueError("mse_tolerance must be positive")
    s = table.cum_lengths
    u = table.params
    if s.size < POLY_DEGREE + 1:
        raise RankDeficientKKT(f"arc-length table has {s.size} rows; {POLY_DEGREE + 1} required")
    derivs: dict[int, NDArray[np.float64]] = {}

    def boundary(i: int) -> NDArray[np.float64]:
        if i not in derivs:
            d = _inverse_derivs(curve, u[i])
            d[0] = u[i]
            derivs[i] = d
        return derivs[i]

    segments: list[ModifierPolySegment] = []

    def recurse(i0: int, i1: int):
        span = s[i1] - s[i0]
        sigma = (s[i0: i1 + 1] - s[i0]) / span
        scale = span ** np.arange(N_BOUNDARY)
        a, mse = fit_segment(sigma, u[i0: i1 + 1], boundary(i0) * scale, boundary(i1) * scale)
        n = i1 - i0 + 1
        mid = n // 2
        can_split = min(mid + 1, n - mid) >= POLY_DEGREE + 1
        if mse <= mse_tolerance or not can_split:
            segments.append(
                ModifierPolySegment(a, float(s[i0]), float(s[i1]), mse, n, flagged=mse > mse_tolerance)
            )
            return
        recurse(i0, i0 + mid)
        recurse(i0 + mid, i1)

    recurse(0, s.size - 1)
    result = ModifierPolySet(tuple(segments), mse_tolerance)
    if result.flagged:
        worst = max(seg.mse for seg in segments)
        warnings.warn(
            f"modifier polynomial MSE {worst:.3e} exceeds tolerance {mse_tolerance:.1e} "
            "on a minimal subset",
            UnreachableTolerance,
            stacklevel=2,
        )
    return result
