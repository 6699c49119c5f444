"""Smooth motion planning and fixed-tick interpolation for a four-limb 3T1R parallel mechanism."""

from __future__ import annotations

from .engine import (
    JointLUT,
    MetricsReport,
    MotionPlan,
    MotionSample,
    PlanConfig,
    SampleStream,
    baseline_interpolate,
    compare_interpolators,
    compare_time_allocation,
    compute_metrics,
    ideal_stream,
    interpolate_step,
    plan,
    tracking_error,
)
from .errors import PkmMotionError, PkmMotionWarning
from .kinematics import RobotGeometry, default_geometry, load_geometry
from .minjerk import KinematicLimits
from .waypoints import WaypointSet, fan_path, line_path, spherical_section_path

__version__ = "0.1.0"

__all__ = [
    "JointLUT",
    "KinematicLimits",
    "MetricsReport",
    "MotionPlan",
    "MotionSample",
    "PkmMotionError",
    "PkmMotionWarning",
    "PlanConfig",
    "RobotGeometry",
    "SampleStream",
    "WaypointSet",
    "baseline_interpolate",
    "compare_interpolators",
    "compare_time_allocation",
    "compute_metrics",
    "default_geometry",
    "fan_path",
    "ideal_stream",
    "interpolate_step",
    "line_path",
    "load_geometry",
    "plan",
    "spherical_section_path",
    "tracking_error",
]
