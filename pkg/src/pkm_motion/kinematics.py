"""3T1R parallel mechanism: prismatic rails driving four fixed-length limbs.

Limb ``i`` slides a carriage along the rail ``a_i + d_i * n_i`` (unit
direction ``n_i``). A rod of length ``l_i`` joins a point offset by ``c_i``
along the rail to the platform joint ``p + R_x(alpha) b_i``. Poses are
``P = [x, y, z, alpha]`` in mm and radians.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import BranchSingularity, ConfigError, NoConvergence, SingularJacobian, Unreachable

BRANCH_EPS = 1e-9
DET_EPS = 1e-9
X_AXIS = np.array([1.0, 0.0, 0.0])


def rot_x(alpha: ArrayLike) -> NDArray[np.float64]:
    a = np.asarray(alpha, dtype=float)
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0] = 1.0
    R[..., 1, 1] = c
    R[..., 1, 2] = -s
    R[..., 2, 1] = s
    R[..., 2, 2] = c
    return R


@dataclass(frozen=True, eq=False)
class RobotGeometry:
    """Mechanism constants, one row per limb.

    Attributes:
        base: ``(4, 3)`` rail origins ``a_i`` in mm.
        directions: ``(4, 3)`` unit rail directions.
        lengths: ``(4,)`` rod lengths in mm.
        offsets: ``(4,)`` signed connector offsets ``c_i`` along the rail in mm.
        platform: ``(4, 3)`` platform joints ``b_i`` in the platform frame, mm.
        branches: ``(4,)`` square-root branch signs, -1 or +1.
        home_pose: reference pose ``[x, y, z, alpha]``.
        home_displacement: joint displacements at ``home_pose``, if known.
    """

    base: NDArray[np.float64]
    directions: NDArray[np.float64]
    lengths: NDArray[np.float64]
    offsets: NDArray[np.float64]
    platform: NDArray[np.float64]
    branches: NDArray[np.float64]
    home_pose: NDArray[np.float64]
    home_displacement: NDArray[np.float64] | None = None

    def __post_init__(self):
        fields = {
            "base": (4, 3), "directions": (4, 3), "lengths": (4,), "offsets": (4,),
            "platform": (4, 3), "branches": (4,), "home_pose": (4,),
        }
        for name, shape in fields.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ConfigError(f"expected shape {shape}, got {arr.shape}", field=name)
            if not np.all(np.isfinite(arr)):
                raise ConfigError("values must be finite", field=name)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(np.abs(np.linalg.norm(self.directions, axis=1) - 1.0) > 1e-12):
            raise ConfigError("rail directions must be unit vectors", field="directions")
        if np.any(self.lengths <= 0):
            raise ConfigError("limb lengths must be positive", field="lengths")
        if not np.all(np.isin(self.branches, (-1.0, 1.0))):
            raise ConfigError("branch signs must be -1 or +1", field="branches")
        if self.home_displacement is not None:
            hd = np.asarray(self.home_displacement, dtype=float)
            if hd.shape != (4,):
                raise ConfigError("expected 4 values", field="home_displacement")
            hd.setflags(write=False)
            object.__setattr__(self, "home_displacement", hd)

    @classmethod
    def from_dict(cls, data: dict) -> RobotGeometry:
        try:
            limbs = data["limbs"]
            if len(limbs) != 4:
                raise ConfigError(f"expected 4 limbs, got {len(limbs)}", field="limbs")
            col = lambda key: [limb[key] for limb in limbs]
            home = data.get("home_pose", {"position_mm": [0, 0, 0], "alpha_deg": 0})
            home_pose = list(home["position_mm"]) + [math.radians(home["alpha_deg"])]
            return cls(
                base=col("rail_origin_mm"),
                directions=col("rail_direction"),
                lengths=col("length_mm"),
                offsets=col("offset_mm"),
                platform=col("platform_joint_mm"),
                branches=[limb.get("branch", -1) for limb in limbs],
                home_pose=home_pose,
                home_displacement=data.get("home_displacement_mm"),
            )
        except KeyError as exc:
            raise ConfigError("missing required key", field=str(exc.args[0])) from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed geometry: {exc}") from exc

    def to_dict(self) -> dict:
        limbs = [
            {
                "rail_origin_mm": self.base[i].tolist(),
                "rail_direction": self.directions[i].tolist(),
                "length_mm": float(self.lengths[i]),
                "offset_mm": float(self.offsets[i]),
                "platform_joint_mm": self.platform[i].tolist(),
                "branch": int(self.branches[i]),
            }
            for i in range(4)
        ]
        out = {
            "units": {"length": "mm", "angle": "deg"},
            "limbs": limbs,
            "home_pose": {"position_mm": self.home_pose[:3].tolist(), "alpha_deg": math.degrees(self.home_pose[3])},
        }
        if self.home_displacement is not None:
            out["home_displacement_mm"] = self.home_displacement.tolist()
        return out


def load_geometry(path: str | Path | None = None) -> RobotGeometry:
    """Read a geometry JSON file; ``None`` loads the bundled default."""
    try:
        if path is None:
            text = resources.files("pkm_motion.data").joinpath("default_geometry.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read geometry file: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno) from exc
    return RobotGeometry.from_dict(data)


def default_geometry() -> RobotGeometry:
    return load_geometry(None)


def _limb_vectors(geom: RobotGeometry, pose: NDArray[np.float64]):
    """Platform joints ``b_i`` (world-oriented) and ``v_i = p + b_i - a_i``."""
    R = rot_x(pose[..., 3])
    b = np.einsum("...jk,ik->...ij", R, geom.platform)
    v = pose[..., None, :3] + b - geom.base
    return b, v


def inverse_position(geom: RobotGeometry, pose: ArrayLike) -> NDArray[np.float64]:
    """Closed-form joint displacements for poses ``[x, y, z, alpha]``.

    Raises:
        Unreachable: a limb cannot reach (negative radicand).
        BranchSingularity: the radicand is below 1e-9 mm^2.
    """
    P = np.asarray(pose, dtype=float)
    _, v = _limb_vectors(geom, P)
    along = np.einsum("...ik,ik->...i", v, geom.directions)
    radicand = geom.lengths**2 - (np.sum(v * v, axis=-1) - along**2)
    if np.any(radicand < 0):
        limb = int(np.flatnonzero(np.any(radicand.reshape(-1, 4) < 0, axis=0))[0])
        raise Unreachable(f"limb {limb + 1} cannot reach the pose", limb=limb)
    if np.any(radicand < BRANCH_EPS):
        limb = int(np.flatnonzero(np.any(radicand.reshape(-1, 4) < BRANCH_EPS, axis=0))[0])
        raise BranchSingularity(f"limb {limb + 1} is fully stretched across its rail", limb=limb)
    return -geom.offsets + along + geom.branches * np.sqrt(radicand)


def limb_vectors(geom: RobotGeometry, pose: ArrayLike, d: ArrayLike | None = None) -> NDArray[np.float64]:
    """Rod vectors ``L_i = v_i - (d_i + c_i) n_i``; shape ``(..., 4, 3)``."""
    P = np.asarray(pose, dtype=float)
    dd = inverse_position(geom, P) if d is None else np.asarray(d, dtype=float)
    _, v = _limb_vectors(geom, P)
    return v - (dd + geom.offsets)[..., None] * geom.directions


def jacobians(geom: RobotGeometry, pose: ArrayLike, d: ArrayLike | None = None, warn: bool = True) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """``J_p`` and diagonal ``J_d`` with ``J_p dP/dt = J_d dd/dt``.

    Row ``i`` of ``J_p`` is ``[L_i, (b_i x L_i) . x]``;
    ``J_d = diag(n_i . L_i)``.

    Warns:
        SingularJacobian: ``|det|`` of either matrix below 1e-9.
    """
    P = np.asarray(pose, dtype=float)
    b, _ = _limb_vectors(geom, P)
    L = limb_vectors(geom, P, d)
    Jp = np.concatenate([L, np.cross(b, L)[..., :1]], axis=-1)
    diag = np.einsum("...ik,ik->...i", L, geom.directions)
    Jd = diag[..., :, None] * np.eye(4)
    if warn and (np.any(np.abs(np.linalg.det(Jp)) < DET_EPS) or np.any(np.abs(np.prod(diag, axis=-1)) < DET_EPS)):
        warnings.warn("Jacobian determinant below 1e-9", SingularJacobian, stacklevel=2)
    return Jp, Jd


def forward_position(
    geom: RobotGeometry,
    d: ArrayLike,
    guess: ArrayLike | None = None,
    max_iter: int = 50,
    tol: float = 1e-10,
) -> NDArray[np.float64]:
    """Pose from joint displacements by Newton iteration on ``|L_i|^2 - l_i^2``.

    The residual Jacobian is ``2 J_p``. Converges when the residual is below
    ``tol`` mm^2 (raised to the rounding floor of the squared lengths) or the
    step stalls at rounding level.

    Raises:
        NoConvergence: no convergence within ``max_iter`` iterations.
    """
    dd = np.asarray(d, dtype=float)
    P = np.array(geom.home_pose if guess is None else guess, dtype=float)
    # squared lengths carry rounding of order eps * l^2
    tol = max(tol, 64.0 * np.finfo(float).eps * float(np.max(geom.lengths)) ** 2)
    for _ in range(max_iter):
        b, v = _limb_vectors(geom, P)
        L = v - (dd + geom.offsets)[:, None] * geom.directions
        res = np.sum(L * L, axis=1) - geom.lengths**2
        if np.max(np.abs(res)) < tol:
            return P
        Jp = np.column_stack([L, np.cross(b, L)[:, 0]])
        try:
            step = np.linalg.solve(2.0 * Jp, res)
        except np.linalg.LinAlgError as exc:
            raise NoConvergence("singular Jacobian during forward kinematics") from exc
        P = P - step
        if np.max(np.abs(step[:3])) < 1e-13 * max(1.0, np.max(np.abs(P[:3]))) and abs(step[3]) < 1e-15:
            return P
    raise NoConvergence(f"forward kinematics did not converge in {max_iter} iterations")


def _fd_step(P1, P2, P3, length_scale: float = 100.0) -> NDArray[np.float64]:
    """Per-sample time step for differencing ``J`` along the local Taylor polynomial.

    A characteristic time is taken from the derivative magnitudes (rotation
    weighted by ``length_scale`` mm/rad) and a small fraction of it is used.
    """
    w = np.array([1.0, 1.0, 1.0, length_scale])
    mags = [np.linalg.norm(Pk * w, axis=-1) for Pk in (P1, P2, P3)]
    tc = np.full(mags[0].shape, np.inf)
    for k, mk in enumerate(mags, start=1):
        with np.errstate(divide="ignore"):
            tc = np.minimum(tc, np.where(mk > 0, (length_scale / mk) ** (1.0 / k), np.inf))
    return np.where(np.isfinite(tc), 1e-2 * tc, 1.0)


def jacobian_derivatives(geom: RobotGeometry, pose: ArrayLike, pose_derivs: ArrayLike, order: int = 2):
    """Time derivatives ``J^(k)`` for ``k = 0..order`` (``order <= 2``).

    ``J`` is evaluated on the cubic Taylor polynomial of the pose at offsets
    ``-2h..2h`` and differenced with five-point central stencils; the cubic
    carries the exact first and second derivatives of ``J`` at the sample.

    Args:
        pose: ``(n, 4)`` poses.
        pose_derivs: ``(3, n, 4)`` first to third pose derivatives.

    Returns:
        ``(Jp_list, Jd_list)``, each a list of ``(n, 4, 4)`` arrays.
    """
    P = np.atleast_2d(np.asarray(pose, dtype=float))
    D = np.asarray(pose_derivs, dtype=float).reshape(3, -1, 4)
    h = _fd_step(D[0], D[1], D[2])[:, None]
    Jp0, Jd0 = jacobians(geom, P)
    Jps, Jds = [Jp0], [Jd0]
    if order == 0:
        return Jps, Jds
    evals = {}
    for m in (-2, -1, 1, 2):
        delta = m * h
        Pm = P + D[0] * delta + D[1] * delta**2 / 2 + D[2] * delta**3 / 6
        evals[m] = jacobians(geom, Pm, warn=False)
    hh = h[:, :, None]
    for idx, (lst, base) in enumerate(((Jps, Jp0), (Jds, Jd0))):
        f = {m: evals[m][idx] for m in evals}
        lst.append((f[-2] - 8 * f[-1] + 8 * f[1] - f[2]) / (12 * hh))
        if order >= 2:
            lst.append((-f[-2] + 16 * f[-1] - 30 * base + 16 * f[1] - f[2]) / (12 * hh**2))
    return Jps, Jds


def joint_derivatives(geom: RobotGeometry, pose: ArrayLike, pose_derivs: ArrayLike, n: int = 3, jac=None) -> NDArray[np.float64]:
    """Joint velocity, acceleration and jerk from pose derivatives.

    Recursive Leibniz form: for ``k = 0..n-1``
    ``J_d d^(k+1) = sum_j C(k,j) J_p^(k-j) P^(j+1) - sum_{j<k} C(k,j) J_d^(k-j) d^(j+1)``.

    Args:
        pose: ``(m, 4)`` poses.
        pose_derivs: ``(3, m, 4)`` pose derivatives of orders 1..3.
        n: highest joint derivative order (<= 3).
        jac: precomputed output of :func:`jacobian_derivatives`.

    Returns:
        ``(n, m, 4)`` joint derivatives.
    """
    P = np.atleast_2d(np.asarray(pose, dtype=float))
    Pd = np.asarray(pose_derivs, dtype=float).reshape(3, -1, 4)
    Jps, Jds = jac if jac is not None else jacobian_derivatives(geom, P, Pd, order=max(n - 1, 0))
    diag = np.einsum("nii->ni", Jds[0])
    out = np.zeros((n,) + P.shape)
    for k in range(n):
        rhs = sum(math.comb(k, j) * np.einsum("nab,nb->na", Jps[k - j], Pd[j]) for j in range(k + 1))
        for j in range(k):
            rhs = rhs - math.comb(k, j) * np.einsum("nab,nb->na", Jds[k - j], out[j])
        out[k] = rhs / diag
    return out


def pose_derivatives(geom: RobotGeometry, pose: ArrayLike, joint_derivs: ArrayLike, jac) -> NDArray[np.float64]:
    """Inverse recursion: pose derivatives from joint derivatives.

    ``J_p P^(k+1) = sum_j C(k,j) J_d^(k-j) d^(j+1) - sum_{j<k} C(k,j) J_p^(k-j) P^(j+1)``.
    """
    P = np.atleast_2d(np.asarray(pose, dtype=float))
    dd = np.asarray(joint_derivs, dtype=float)
    n = dd.shape[0]
    Jps, Jds = jac
    out = np.zeros((n,) + P.shape)
    for k in range(n):
        rhs = sum(math.comb(k, j) * np.einsum("nab,nb->na", Jds[k - j], dd[j]) for j in range(k + 1))
        for j in range(k):
            rhs = rhs - math.comb(k, j) * np.einsum("nab,nb->na", Jps[k - j], out[j])
        out[k] = np.linalg.solve(Jps[0], rhs[..., None])[..., 0]
    return out
