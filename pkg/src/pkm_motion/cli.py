"""Command-line front end.

Exit codes: 0 success, 1 invalid input or failed check, 2 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from . import errors as err
from . import kinematics as kin
from .config import ProjectConfig, load_config
from .engine import (
    compare_interpolators,
    interpolate_step,
    interpolator_streams,
    plan as build_plan,
)
from .io import export_plan, load_joint_lut, load_waypoints, render_figures, write_compare_csv, fmt
from .waypoints import WaypointSet, fan_path, spherical_section_path

log = logging.getLogger("pkm_motion")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_SOLVER = 2

# errors caused by the user's input rather than by a numerical stage
VALIDATION_ERRORS = (
    err.ParseError,
    err.ConfigError,
    err.IoError,
    err.InvalidPath,
    err.DuplicateConsecutiveWaypoint,
    err.TooFewWaypoints,
    err.TimeOutOfRange,
    err.LengthMismatch,
    err.Unreachable,
    err.HemisphereCrossing,
    err.InfeasibleLimits,
)

BUNDLED_PATHS = {"fan": fan_path, "spherical": spherical_section_path}


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1 instead of argparse's 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _add_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--waypoints", type=Path, help="waypoint CSV (x_mm,y_mm,z_mm,alpha_deg,beta_deg,gamma_deg)")
    src.add_argument("--path", choices=sorted(BUNDLED_PATHS), default="fan", help="bundled synthetic path (default: fan)")


def _common(p: argparse.ArgumentParser, suppress: bool) -> None:
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", type=Path, default=default(None), help="project config JSON (default: $PKM_MOTION_CONFIG, then built-in)")
    p.add_argument("--seed", type=int, default=default(0), help="seed for every randomized step (default: 0)")
    p.add_argument("-v", "--verbose", action="store_true", default=default(False), help="log progress and warnings to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pkm-motion", description="Motion planning and interpolation for a 3T1R parallel mechanism.")
    _common(parser, suppress=False)
    # the shared options are accepted before or after the subcommand
    shared = argparse.ArgumentParser(add_help=False)
    _common(shared, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("plan", parents=[shared], help="plan a motion and write all artifacts")
    _add_source(p)
    p.add_argument("--out", type=Path, help="output directory (default: from config)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    p = sub.add_parser("compare", parents=[shared], help="compare interpolation methods at constant feed")
    _add_source(p)
    p.add_argument("--feed", type=float, help="commanded feed in mm/s (default: from config)")
    p.add_argument("--dt", type=float, help="interpolation tick in s (default: offline tick)")
    p.add_argument("--out", type=Path, help="write the table here instead of stdout")
    p.add_argument("--figures", type=Path, help="also render feed/accel/jerk figures into this directory")

    p = sub.add_parser("kincheck", parents=[shared], help="kinematics round-trip and derivative checks")
    p.add_argument("--geometry", type=Path, help="geometry JSON (default: from config)")
    p.add_argument("--samples", type=int, default=100, help="random poses to test (default: 100)")

    p = sub.add_parser("step", parents=[shared], help="evaluate a plan at one time or over a time range")
    _add_source(p)
    p.add_argument("--lut", type=Path, help="evaluate joints from an exported joint_lut.csv instead of planning")
    when = p.add_mutually_exclusive_group(required=True)
    when.add_argument("--t", type=float, help="time in s")
    when.add_argument("--range", nargs=3, type=float, metavar=("T0", "T1", "DT"), help="times T0, T0+DT, ... up to T1")
    return parser


def _waypoints(args) -> WaypointSet:
    if args.waypoints is not None:
        return load_waypoints(args.waypoints)
    return BUNDLED_PATHS[args.path]()


def _plan(args, cfg: ProjectConfig):
    wp = _waypoints(args)
    log.info("planning %s (%d waypoints)", wp.name or "path", len(wp))
    return build_plan(wp, cfg.load_geometry(), cfg.limits(), cfg.plan_config())


def cmd_plan(args, cfg: ProjectConfig) -> int:
    plan = _plan(args, cfg)
    out = args.out or Path(cfg.output_dir)
    export_plan(plan, out, figures=not args.no_figures)
    print(f"T = {plan.total_time:.6f} s, S = {plan.total_length:.6f} mm, {len(plan.lut)} table segments, "
          f"binding {plan.time_scale.binding}; artifacts in {out}")
    return EXIT_OK


def cmd_compare(args, cfg: ProjectConfig) -> int:
    plan = _plan(args, cfg)
    feed = args.feed or cfg.compare_feed
    dt = args.dt or cfg.dt_offline
    if not (feed > 0 and dt > 0):
        raise err.ConfigError("feed and tick must be positive")
    streams = interpolator_streams(plan, feed, dt)
    reports = compare_interpolators(plan, streams=streams)
    text = write_compare_csv(reports, args.out)
    if args.out is None:
        sys.stdout.write(text)
    if args.figures is not None:
        from .io import plot_series

        args.figures.mkdir(parents=True, exist_ok=True)
        render_figures(plot_series(plan, streams), args.figures)
    return EXIT_OK


def kinematics_report(geom: kin.RobotGeometry, samples: int, rng: np.random.Generator) -> dict:
    """Round-trip, Jacobian and derivative-recursion checks on random reachable poses."""
    if samples < 1:
        raise err.ConfigError("must be at least 1", field="samples")
    home = geom.home_pose
    poses = home + np.column_stack([
        rng.uniform(-100.0, 100.0, (samples, 3)),
        np.radians(rng.uniform(-30.0, 30.0, samples)),
    ])
    d = kin.inverse_position(geom, poses)
    fk = np.array([kin.forward_position(geom, di, home) for di in d])
    round_trip = float(np.max(np.linalg.norm(fk[:, :3] - poses[:, :3], axis=1)))
    round_trip_rad = float(np.max(np.abs(fk[:, 3] - poses[:, 3])))

    # rates through both recursions on a random cubic motion
    P1 = rng.normal(size=(samples, 4)) * [10.0, 10.0, 10.0, 0.1]
    P2 = rng.normal(size=(samples, 4)) * [50.0, 50.0, 50.0, 0.5]
    P3 = rng.normal(size=(samples, 4)) * [200.0, 200.0, 200.0, 2.0]
    Pd = np.stack([P1, P2, P3])
    jac = kin.jacobian_derivatives(geom, poses, Pd, order=2)
    dd = kin.joint_derivatives(geom, poses, Pd, 3, jac)
    back = kin.pose_derivatives(geom, poses, dd, jac)
    mutual = float(np.max(np.abs(back - Pd) / (np.abs(Pd) + 1.0)))

    # finite differences of the IK along the motion's Taylor polynomial
    h = 1e-3
    steps = np.arange(-3, 4)
    fd_err = 0.0
    for i in range(samples):
        traj = poses[i] + np.outer(steps * h, P1[i]) + np.outer((steps * h) ** 2 / 2, P2[i]) + np.outer((steps * h) ** 3 / 6, P3[i])
        q = kin.inverse_position(geom, traj)
        acc = (-q[1] + 16 * q[2] - 30 * q[3] + 16 * q[4] - q[5]) / (12 * h**2)
        jerk = (q[0] - 8 * q[1] + 13 * q[2] - 13 * q[4] + 8 * q[5] - q[6]) / (8 * h**3)
        for fd, ana in ((acc, dd[1, i]), (jerk, dd[2, i])):
            fd_err = max(fd_err, float(np.max(np.abs(fd - ana) / np.maximum(np.abs(ana), 1.0))))
    Jp, _ = kin.jacobians(geom, poses, d, warn=False)
    return {
        "samples": samples,
        "round_trip_mm": round_trip,
        "round_trip_rad": round_trip_rad,
        "mutual_inverse_rel": mutual,
        "fd_rel": fd_err,
        "min_abs_det_jp": float(np.min(np.abs(np.linalg.det(Jp)))),
        "passed": bool(round_trip <= 1e-9 and round_trip_rad <= 1e-9 and mutual <= 1e-8 and fd_err <= 1e-3),
    }


def cmd_kincheck(args, cfg: ProjectConfig) -> int:
    geom = kin.load_geometry(args.geometry) if args.geometry is not None else cfg.load_geometry()
    report = kinematics_report(geom, args.samples, np.random.default_rng(args.seed))
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["passed"] else EXIT_INVALID


def _times(args) -> np.ndarray:
    if args.t is not None:
        return np.array([args.t])
    t0, t1, dt = args.range
    if not dt > 0 or t1 < t0:
        raise err.ConfigError("need DT > 0 and T1 >= T0", field="range")
    n = int(math.floor((t1 - t0) / dt + 1e-9))
    return t0 + dt * np.arange(n + 1)


def cmd_step(args, cfg: ProjectConfig) -> int:
    if args.lut is not None:
        lut = load_joint_lut(args.lut)
        times = _times(args)
        cols = ["t_s"] + [f"d{k}j{i}" for k in range(4) for i in range(1, lut.n_joints + 1)]
        rows = [[t, *lut.evaluate(float(t), 3).ravel()] for t in times]
    else:
        plan = _plan(args, cfg)
        times = _times(args)
        cols = ["t_s", "s_mm", "u", "w", "x_mm", "y_mm", "z_mm", "alpha_deg"]
        cols += [f"j{i}_mm" for i in range(1, 5)]
        cols += [f"d{k}j{i}_mm_s{k if k > 1 else ''}" for k in (1, 2, 3) for i in range(1, 5)]
        rows = []
        for t in times:
            smp = interpolate_step(plan, float(t))
            pose = smp.pose.copy()
            pose[3] = math.degrees(pose[3])
            rows.append([smp.t, smp.s, smp.u, smp.w, *pose, *smp.joints, *smp.joint_derivs.ravel()])
    sys.stdout.write(",".join(cols) + "\n")
    for row in rows:
        sys.stdout.write(",".join(fmt(v) for v in row) + "\n")
    return EXIT_OK


COMMANDS = {"plan": cmd_plan, "compare": cmd_compare, "kincheck": cmd_kincheck, "step": cmd_step}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    np.random.seed(args.seed)
    try:
        cfg = load_config(args.config)
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", err.PkmMotionWarning)
            return COMMANDS[args.command](args, cfg)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except err.PkmMotionError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
