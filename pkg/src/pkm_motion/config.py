"""Project configuration: JSON file, validation and conversion to planner inputs."""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .engine import PlanConfig
from .errors import ConfigError
from .kinematics import RobotGeometry, load_geometry
from .minjerk import KinematicLimits
from .sync import SYNC_DEGREE

ENV_VAR = "PKM_MOTION_CONFIG"

_POSITION_DEGREES = range(3, 10)
_ORIENTATION_DEGREES = range(1, 10)
_TRAJECTORY_DEGREES = (7, 9)
_SEGMENT_METHODS = ("bfgs", "lbfgs", "nelder-mead")


@dataclass(frozen=True)
class ProjectConfig:
    """Everything a CLI run needs besides the waypoints.

    Lengths are in mm, angles in degrees and times in seconds. Limits are
    magnitudes of the first three time derivatives of the path length
    (``task_*``) and of each joint displacement (``joint_*``).
    """

    geometry: str | None = None
    task_v: float = 100.0
    task_a: float = 1000.0
    task_j: float = 20_000.0
    joint_v: float = 150.0
    joint_a: float = 1500.0
    joint_j: float = 30_000.0
    position_degree: int = 5
    orientation_degree: int = 5
    sync_degree: int = SYNC_DEGREE
    trajectory_degree: int = 7
    quadrature_tol: float = 1e-8
    mse_tol: float = 1e-10
    qp_tol: float = 1e-10
    dt_offline: float = 0.010
    dt_runtime: float = 65e-6
    segment_time_method: str = "bfgs"
    compare_feed: float = 80.0
    output_dir: str = "pkm_motion_out"
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self, lines: dict[str, int] | None = None) -> None:
        """Raise :class:`ConfigError` naming the first offending field."""
        lines = lines or {}

        def fail(name: str, msg: str):
            raise ConfigError(msg, field=name, line=lines.get(name))

        positive = (
            "task_v", "task_a", "task_j", "joint_v", "joint_a", "joint_j",
            "quadrature_tol", "mse_tol", "qp_tol", "dt_offline", "dt_runtime", "compare_feed",
        )
        for name in positive:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                fail(name, f"expected a number, got {value!r}")
            if not value > 0 or value != value or value == float("inf"):
                fail(name, f"must be positive and finite, got {value!r}")
        checks = (
            ("position_degree", _POSITION_DEGREES),
            ("orientation_degree", _ORIENTATION_DEGREES),
            ("sync_degree", (SYNC_DEGREE,)),
            ("trajectory_degree", _TRAJECTORY_DEGREES),
        )
        for name, allowed in checks:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value not in allowed:
                fail(name, f"unsupported degree {value!r}; allowed {list(allowed)}")
        if self.dt_runtime > self.dt_offline:
            fail("dt_runtime", "runtime tick must not exceed the offline tick")
        if self.segment_time_method not in _SEGMENT_METHODS:
            fail("segment_time_method", f"expected one of {list(_SEGMENT_METHODS)}")
        if not isinstance(self.output_dir, str) or not self.output_dir:
            fail("output_dir", "must be a non-empty path")
        if self.geometry is not None and not isinstance(self.geometry, str):
            fail("geometry", "must be a file path or null")

    def plan_config(self) -> PlanConfig:
        return PlanConfig(
            position_degree=self.position_degree,
            orientation_degree=self.orientation_degree,
            trajectory_degree=self.trajectory_degree,
            quadrature_tol=self.quadrature_tol,
            mse_tol=self.mse_tol,
            qp_tol=self.qp_tol,
            dt_offline=self.dt_offline,
            dt_runtime=self.dt_runtime,
            segment_time_method=self.segment_time_method,
            compare_feed=self.compare_feed,
        )

    def limits(self) -> KinematicLimits:
        return KinematicLimits(self.task_v, self.task_a, self.task_j, self.joint_v, self.joint_a, self.joint_j)

    def load_geometry(self) -> RobotGeometry:
        """Geometry file resolved relative to the config file; bundled default if unset."""
        if self.geometry is None:
            return load_geometry(None)
        path = Path(self.geometry)
        if not path.is_absolute() and self.source is not None:
            path = Path(self.source).parent / path
        return load_geometry(path)

    def to_dict(self) -> dict:
        return {
            "geometry": self.geometry,
            "limits": {
                "task": {"v": self.task_v, "a": self.task_a, "j": self.task_j},
                "joint": {"v": self.joint_v, "a": self.joint_a, "j": self.joint_j},
            },
            "degrees": {
                "position": self.position_degree,
                "orientation": self.orientation_degree,
                "sync": self.sync_degree,
                "trajectory": self.trajectory_degree,
            },
            "tolerances": {"quadrature": self.quadrature_tol, "mse": self.mse_tol, "qp": self.qp_tol},
            "ticks": {"offline_s": self.dt_offline, "runtime_s": self.dt_runtime},
            "segment_time_method": self.segment_time_method,
            "compare_feed_mm_s": self.compare_feed,
            "output_dir": self.output_dir,
        }


# nested JSON key path -> flat field name
_LAYOUT = {
    ("geometry",): "geometry",
    ("limits", "task", "v"): "task_v",
    ("limits", "task", "a"): "task_a",
    ("limits", "task", "j"): "task_j",
    ("limits", "joint", "v"): "joint_v",
    ("limits", "joint", "a"): "joint_a",
    ("limits", "joint", "j"): "joint_j",
    ("degrees", "position"): "position_degree",
    ("degrees", "orientation"): "orientation_degree",
    ("degrees", "sync"): "sync_degree",
    ("degrees", "trajectory"): "trajectory_degree",
    ("tolerances", "quadrature"): "quadrature_tol",
    ("tolerances", "mse"): "mse_tol",
    ("tolerances", "qp"): "qp_tol",
    ("ticks", "offline_s"): "dt_offline",
    ("ticks", "runtime_s"): "dt_runtime",
    ("segment_time_method",): "segment_time_method",
    ("compare_feed_mm_s",): "compare_feed",
    ("output_dir",): "output_dir",
}
_SECTIONS = {path[:i] for path in _LAYOUT for i in range(1, len(path))}


def _key_lines(text: str) -> dict[tuple[str, ...], int]:
    """1-based line of every object key, by nesting path.

    A light scan of the JSON token stream; string contents are skipped so
    braces inside values do not disturb the nesting.
    """
    lines: dict[tuple[str, ...], int] = {}
    stack: list[str | None] = []
    pending: str | None = None
    token = re.compile(r'"(?:[^"\\]|\\.)*"|[{}\[\]:,]')
    for m in token.finditer(text):
        tok = m.group()
        if tok == "{" or tok == "[":
            stack.append(pending)
            pending = None
        elif tok == "}" or tok == "]":
            if stack:
                stack.pop()
            pending = None
        elif tok.startswith('"'):
            after = text[m.end():].lstrip()
            if after.startswith(":"):
                pending = json.loads(tok)
                path = tuple(k for k in stack if k is not None) + (pending,)
                lines.setdefault(path, text.count("\n", 0, m.start()) + 1)
        elif tok == ",":
            pending = None
    return lines


def parse_config(text: str, source: str | None = None) -> ProjectConfig:
    """Build a validated config from JSON text.

    Raises:
        ConfigError: bad JSON, unknown keys or invalid values; the message
            names the field and the line it appears on.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", line=1)
    key_lines = _key_lines(text)
    values: dict = {}
    field_lines: dict[str, int] = {}

    def walk(node: dict, prefix: tuple[str, ...]):
        for key, value in node.items():
            path = prefix + (key,)
            dotted = ".".join(path)
            if path in _LAYOUT:
                values[_LAYOUT[path]] = value
                field_lines[_LAYOUT[path]] = key_lines.get(path)
            elif path in _SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError("expected an object", field=dotted, line=key_lines.get(path))
                walk(value, path)
            else:
                raise ConfigError("unknown key", field=dotted, line=key_lines.get(path))

    walk(data, ())
    dotted_of = {v: ".".join(k) for k, v in _LAYOUT.items()}
    try:
        cfg = ProjectConfig.__new__(ProjectConfig)
        defaults = ProjectConfig()
        for name in defaults.__dataclass_fields__:
            object.__setattr__(cfg, name, values.get(name, getattr(defaults, name)))
        object.__setattr__(cfg, "source", source)
        cfg.validate(field_lines)
    except ConfigError as exc:
        name = exc.field
        raise ConfigError(
            exc.detail,
            field=dotted_of.get(name, name),
            line=field_lines.get(name),
        ) from None
    return cfg


def load_config(path: str | os.PathLike | None = None) -> ProjectConfig:
    """Read a config file; falls back to ``$PKM_MOTION_CONFIG`` and then to defaults.

    Raises:
        ConfigError: unreadable or invalid file.
    """
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return ProjectConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    return parse_config(text, source=str(path))
