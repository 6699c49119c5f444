"""Tool-pose waypoints and the bundled synthetic paths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DuplicateConsecutiveWaypoint, InvalidPath


@dataclass(frozen=True, eq=False)
class WaypointSet:
    """Ordered tool poses.

    Attributes:
        positions: ``(N+1, 3)`` tool-tip positions in mm.
        orientations: ``(N+1, 3)`` intrinsic X-Y-Z Euler angles in degrees.
        name: free-form label carried into reports.
    """

    positions: NDArray[np.float64]
    orientations: NDArray[np.float64]
    name: str = ""

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        ori = np.atleast_2d(np.asarray(self.orientations, dtype=float))
        if pos.shape[1] != 3 or ori.shape[1] != 3:
            raise ValueError("positions and orientations must have 3 columns")
        if pos.shape[0] != ori.shape[0]:
            raise ValueError("positions and orientations differ in length")
        pos.setflags(write=False)
        ori.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "orientations", ori)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def validate(self, min_count: int = 2) -> None:
        """Raise if the set cannot describe a motion."""
        if len(self) < min_count:
            raise InvalidPath(f"{len(self)} waypoint(s); at least {min_count} needed for motion")
        chords = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
        dup = np.flatnonzero(chords == 0.0)
        if dup.size:
            raise DuplicateConsecutiveWaypoint(
                f"waypoints {dup[0]} and {dup[0] + 1} have identical positions"
            )


def fan_path(count: int = 89, inner: float = 30.0, lobe: float = 32.5) -> WaypointSet:
    """Four-lobe fan outline with four sharp re-entrant corners.

    Polar curve ``r = inner + lobe * |cos(2 theta)|`` sampled at ``count``
    equally spaced angles on ``[0, 2 pi]`` in the z = 0 plane. The kinks of
    ``|cos|`` at ``theta = pi/4 + k pi/2`` become the high-curvature corners
    after spline fitting. The outline spans about 125 x 125 mm. The tool
    orientation is constant.
    """
    theta = np.linspace(0.0, 2.0 * np.pi, count)
    r = inner + lobe * np.abs(np.cos(2.0 * theta))
    pos = np.column_stack([r * np.cos(theta), r * np.sin(theta), np.zeros(count)])
    return WaypointSet(pos, np.zeros((count, 3)), name="fan")


def spherical_section_path(count: int = 18, radius: float = 60.0, half_angle_deg: float = 30.0) -> WaypointSet:
    """Circular arc in the y-z plane with the tool kept normal to the arc.

    With ``x_k = 2k/(count-1) - 1`` the arc angles are
    ``phi_k = half_angle * (0.7 x_k + 0.3 x_k^3)``, so samples are denser
    near the middle and the fitted curve has a varying parametric speed.
    Points are ``(0, R sin phi, R cos phi - R)`` and the tool tilts about x
    by ``alpha = phi``.
    """
    x = np.linspace(-1.0, 1.0, count)
    phi = np.radians(half_angle_deg) * (0.7 * x + 0.3 * x**3)
    pos = np.column_stack([np.zeros(count), radius * np.sin(phi), radius * np.cos(phi) - radius])
    ori = np.column_stack([np.degrees(phi), np.zeros(count), np.zeros(count)])
    return WaypointSet(pos, ori, name="spherical_section")


def line_path(start: ArrayLike, end: ArrayLike, count: int = 8, alpha_deg: float = 0.0) -> WaypointSet:
    """Equidistant collinear waypoints with a constant orientation."""
    a = np.asarray(start, dtype=float)
    b = np.asarray(end, dtype=float)
    t = np.linspace(0.0, 1.0, count)[:, None]
    ori = np.zeros((count, 3))
    ori[:, 0] = alpha_deg
    return WaypointSet(a + t * (b - a), ori, name="line")
