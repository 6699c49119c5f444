"""File formats: waypoint CSV, plan artifacts, lookup-table round trip and figures.

Files use mm, s and degrees; every CSV names its unit in each column
header. Floating-point fields are written with 17 significant digits so
they parse back to the identical double.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .bspline import param_at_length
from .engine import (
    JointLUT,
    MetricsReport,
    MotionPlan,
    SampleStream,
    compare_interpolators,
    compare_time_allocation,
    interpolator_streams,
    tracking_error,
    uniform_time_trajectory,
)
from .errors import IoError, ParseError
from .quaternion import eval_orientation
from .waypoints import WaypointSet

WAYPOINT_COLUMNS = ("x_mm", "y_mm", "z_mm", "alpha_deg", "beta_deg", "gamma_deg")
SIGNALS = ("feed", "accel", "jerk")
SIGNAL_UNITS = {"feed": "mm_s", "accel": "mm_s2", "jerk": "mm_s3"}

METRIC_ENTRY_SCHEMA = {
    "type": "object",
    "required": ["max_deviation", "mean_deviation", "deviation_std", "peak", "rms", "std"],
    "properties": {
        k: {"type": "number", "minimum": 0}
        for k in ("max_deviation", "mean_deviation", "deviation_std", "peak", "rms", "std")
    },
    "additionalProperties": False,
}

METRICS_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["units", "plan", "interpolators", "time_allocation"],
    "properties": {
        "units": {"type": "object", "additionalProperties": {"type": "string"}},
        "plan": {
            "type": "object",
            "required": [
                "path", "total_time_s", "path_length_mm", "waypoints", "lut_segments",
                "time_scale", "binding_constraint", "tracking_error_mm", "tracking_error_deg",
                "compare_feed_mm_s", "compare_tick_s",
            ],
            "properties": {
                "path": {"type": "string"},
                "total_time_s": {"type": "number", "exclusiveMinimum": 0},
                "path_length_mm": {"type": "number", "exclusiveMinimum": 0},
                "waypoints": {"type": "integer", "minimum": 2},
                "lut_segments": {"type": "integer", "minimum": 1},
                "time_scale": {"type": "number", "exclusiveMinimum": 0},
                "binding_constraint": {"type": "string"},
                "tracking_error_mm": {"type": "number", "minimum": 0},
                "tracking_error_deg": {"type": "number", "minimum": 0},
                "compare_feed_mm_s": {"type": "number", "exclusiveMinimum": 0},
                "compare_tick_s": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "interpolators": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": METRIC_ENTRY_SCHEMA,
            },
        },
        "time_allocation": {
            "type": "object",
            "required": ["optimized_peak", "uniform_peak", "reduction", "total_time"],
        },
    },
}


def fmt(x: float) -> str:
    """17 significant digits: enough to round-trip any double."""
    return f"{float(x):.17g}"


# waypoints

def parse_waypoints(text: str, name: str = "") -> WaypointSet:
    """Parse waypoint CSV text; see :func:`load_waypoints`."""
    header = None
    rows: list[list[float]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = next(csv.reader([stripped]))
        fields = [f.strip() for f in fields]
        if header is None:
            if tuple(fields) != WAYPOINT_COLUMNS:
                raise ParseError(f"expected header {','.join(WAYPOINT_COLUMNS)}", line=lineno)
            header = fields
            continue
        if len(fields) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(fields)}", line=lineno)
        row = []
        for col, value in zip(header, fields):
            try:
                v = float(value)
            except ValueError:
                raise ParseError(f"not a number: {value!r}", line=lineno, column=col) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite value {value!r}", line=lineno, column=col)
            row.append(v)
        rows.append(row)
    if header is None:
        raise ParseError("missing header line", line=1)
    data = np.array(rows, dtype=float).reshape(-1, 6)
    wp = WaypointSet(data[:, :3], data[:, 3:], name=name)
    wp.validate(min_count=0)
    return wp


def load_waypoints(path: str | Path) -> WaypointSet:
    """Read waypoints from CSV.

    The header is ``x_mm,y_mm,z_mm,alpha_deg,beta_deg,gamma_deg``; blank
    lines and lines starting with ``#`` are skipped.

    Raises:
        ParseError: bad header or field, with its 1-based line number.
        DuplicateConsecutiveWaypoint: two consecutive rows share a position.
        IoError: the file cannot be read.
    """
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise IoError(f"cannot read {p}: {exc}") from exc
    return parse_waypoints(text, name=p.stem)


def write_waypoints(waypoints: WaypointSet, path: str | Path) -> None:
    rows = np.column_stack([waypoints.positions, waypoints.orientations])
    _write_csv(Path(path), WAYPOINT_COLUMNS, rows, comment=f"waypoints: {waypoints.name or 'unnamed'}")


# generic CSV helpers

def _csv_text(columns, rows, comment: str | None = None) -> str:
    buf = _io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _write_csv(path: Path, columns, rows, comment: str | None = None) -> None:
    _write_text(path, _csv_text(columns, rows, comment))


def read_csv_table(path: str | Path) -> tuple[list[str], NDArray[np.float64]]:
    """Header and numeric body of a CSV written by this module (comments skipped)."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    reader = csv.reader(body)
    header = next(reader)
    try:
        data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc
    return header, data.reshape(-1, len(header))


# plan artifacts

def _sample_columns() -> list[str]:
    axes = (("x", "mm"), ("y", "mm"), ("z", "mm"), ("alpha", "deg"))
    cols = ["t_s", "s_mm"] + [f"{a}_{u}" for a, u in axes]
    for k, suffix in ((1, "_s"), (2, "_s2"), (3, "_s3")):
        cols += [f"d{k}{a}_{u}{suffix}" for a, u in axes]
    cols += [f"j{i}_mm" for i in range(1, 5)]
    for k, suffix in ((1, "_s"), (2, "_s2"), (3, "_s3")):
        cols += [f"d{k}j{i}_mm{suffix}" for i in range(1, 5)]
    return cols


def samples_table(plan: MotionPlan) -> tuple[list[str], NDArray[np.float64]]:
    """Offline grid: time, path length, pose, pose derivatives, joints and joint derivatives.

    ``j1..j4`` are joint displacements evaluated from the lookup table;
    ``dk`` prefixes mark k-th time derivatives.
    """
    t = plan.offline_times
    deg = np.array([1.0, 1.0, 1.0, 180.0 / math.pi])
    pose = plan.offline_pose * deg
    pd = plan.offline_pose_derivs * deg
    joints = np.stack([plan.lut.evaluate(float(ti), 3) for ti in t], axis=1)
    cols = [t, plan.offline_s, pose]
    cols += [pd[k] for k in range(3)]
    cols += [joints[k] for k in range(4)]
    return _sample_columns(), np.column_stack(cols)


def lut_table(lut: JointLUT) -> tuple[list[str], list[list]]:
    n = lut.degree
    header = ["joint", "segment", "t_start_s", "tau_s"] + [f"p{k}_mm" for k in range(n + 1)]
    rows = []
    for j in range(lut.n_joints):
        for i in range(len(lut)):
            rows.append([str(j + 1), str(i), lut.starts[i], lut.durations[i], *lut.control_points[i, :, j]])
    return header, rows


def write_joint_lut(lut: JointLUT, path: str | Path) -> None:
    header, rows = lut_table(lut)
    _write_csv(Path(path), header, rows, comment="joint lookup table: Bezier control points per joint and segment; mm, s")


def load_joint_lut(path: str | Path) -> JointLUT:
    """Rebuild a :class:`JointLUT` from ``joint_lut.csv``.

    Raises:
        ParseError: missing columns or inconsistent segment timing across joints.
    """
    header, data = read_csv_table(path)
    if header[:4] != ["joint", "segment", "t_start_s", "tau_s"]:
        raise ParseError("unexpected joint table header", line=1)
    joints = np.unique(data[:, 0]).astype(int)
    per = [data[data[:, 0] == j] for j in joints]
    per = [blk[np.argsort(blk[:, 1], kind="stable")] for blk in per]
    m = per[0].shape[0]
    for blk in per[1:]:
        if blk.shape[0] != m or not np.array_equal(blk[:, 2:4], per[0][:, 2:4]):
            raise ParseError("segment timing differs between joints")
    ctrl = np.stack([blk[:, 4:] for blk in per], axis=2)
    return JointLUT(per[0][:, 2], per[0][:, 3], ctrl)


def metrics_document(
    plan: MotionPlan,
    reports: dict[str, MetricsReport],
    allocation: dict,
    feed: float,
    dt: float,
) -> dict:
    pos_err, ang_err = tracking_error(plan)
    return {
        "units": {"length": "mm", "time": "s", "angle": "deg", "feed": "mm/s", "accel": "mm/s^2", "jerk": "mm/s^3"},
        "plan": {
            "path": plan.waypoints.name or "unnamed",
            "total_time_s": plan.total_time,
            "path_length_mm": plan.total_length,
            "waypoints": len(plan.waypoints),
            "lut_segments": len(plan.lut),
            "time_scale": plan.time_scale.k,
            "binding_constraint": plan.time_scale.binding,
            "tracking_error_mm": pos_err,
            "tracking_error_deg": math.degrees(ang_err),
            "compare_feed_mm_s": feed,
            "compare_tick_s": dt,
        },
        "interpolators": {label: rep.to_dict() for label, rep in reports.items()},
        "time_allocation": allocation,
    }


def validate_metrics(doc: dict) -> None:
    """Check a metrics document against :data:`METRICS_SCHEMA` (raises on failure)."""
    import jsonschema

    jsonschema.validate(doc, METRICS_SCHEMA)


def compare_rows(reports: dict[str, MetricsReport]) -> tuple[list[str], list[list]]:
    """Table with max and mean deviation of feed, acceleration and jerk per method."""
    header = ["method"]
    for sig in SIGNALS:
        header += [f"{sig}_max_dev_{SIGNAL_UNITS[sig]}", f"{sig}_mean_dev_{SIGNAL_UNITS[sig]}"]
    rows = []
    for label, rep in reports.items():
        row = [label]
        for sig in SIGNALS:
            row += [rep[sig].max_deviation, rep[sig].mean_deviation]
        rows.append(row)
    return header, rows


def write_compare_csv(reports: dict[str, MetricsReport], path: str | Path | None = None) -> str:
    header, rows = compare_rows(reports)
    text = _csv_text(header, rows, comment="deviation from the exact arc-length stream at constant commanded feed")
    if path is not None:
        _write_text(Path(path), text)
    return text


def plot_series(plan: MotionPlan, streams: dict[str, SampleStream]) -> dict[str, tuple[list[str], NDArray[np.float64]]]:
    """Tables behind every figure, keyed by file stem."""
    out = {}
    ideal = streams["ideal"]
    for sig in SIGNALS:
        cols = ["t_s", f"ideal_{SIGNAL_UNITS[sig]}"]
        data = [ideal.t, ideal.signals[sig]]
        for label, s in streams.items():
            if label == "ideal":
                continue
            cols.append(f"{label}_{SIGNAL_UNITS[sig]}")
            data.append(s.signals[sig])
        out[f"{sig}_profile"] = (cols, np.column_stack(data))

    w = np.linspace(0.0, 1.0, 1001)
    q = eval_orientation(plan.quat_spline, w) if not plan.quat_spline.is_constant else np.tile(plan.quat_spline.base, (w.size, 1))
    out["quaternion_vs_w"] = (["w", "q0", "q1", "q2", "q3"], np.column_stack([w, q]))

    s = np.linspace(0.0, plan.total_length, 2001)
    u_mod = plan.modifier.evaluate(s)
    u_exact = param_at_length(plan.curve, plan.table, s)
    out["u_vs_s"] = (["s_mm", "u_modifier", "u_exact", "u_error"], np.column_stack([s, u_mod, u_exact, u_mod - u_exact]))

    out["w_vs_s"] = (["s_mm", "w", "dw_ds_per_mm"], np.column_stack([s, plan.w_of_s(s), plan.w_of_s(s, 1)]))
    out["sync_points"] = (["s_mm", "w"], np.column_stack([plan.waypoint_lengths, plan.quat_spline.waypoint_params]))

    t = np.linspace(0.0, plan.total_time, 2001)
    base = uniform_time_trajectory(plan)
    cols = ["t_s"]
    data = [t]
    for tag, traj in (("optimized", plan.task), ("uniform", base)):
        for k, unit in enumerate(("mm", "mm_s", "mm_s2", "mm_s3")):
            cols.append(f"{tag}_d{k}s_{unit}")
            data.append(traj.evaluate(t, k)[:, 0])
    out["time_profile"] = (cols, np.column_stack(data))

    tj = plan.offline_times
    jv = plan.joint
    cols = ["t_s"]
    data = [tj]
    for k, unit in enumerate(("mm", "mm_s", "mm_s2", "mm_s3")):
        vals = jv.evaluate(tj, k)
        for i in range(vals.shape[1]):
            cols.append(f"d{k}j{i + 1}_{unit}")
            data.append(vals[:, i])
    out["joint_profile"] = (cols, np.column_stack(data))

    pts = plan.curve.evaluate(np.linspace(0.0, 1.0, 2001))
    out["path"] = (["x_mm", "y_mm", "z_mm"], pts)
    return out


def render_figures(series: dict, directory: Path) -> list[Path]:
    """PNG per figure; returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []

    def save(fig, stem):
        path = directory / f"{stem}.png"
        try:
            fig.savefig(path, dpi=110, bbox_inches="tight")
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc
        finally:
            plt.close(fig)
        written.append(path)

    for sig in SIGNALS:
        cols, data = series[f"{sig}_profile"]
        fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
        ax0.plot(data[:, 0], data[:, 1], "k", lw=1.2, label="ideal")
        for j in range(2, len(cols)):
            label = cols[j].rsplit("_", 2)[0]
            ax0.plot(data[:, 0], data[:, j], lw=0.8, label=label)
            ax1.semilogy(data[:, 0], np.abs(data[:, j] - data[:, 1]) + 1e-16, lw=0.8, label=label)
        ax0.set_ylabel(f"{sig} [{SIGNAL_UNITS[sig].replace('_', '/')}]")
        ax1.set_ylabel("|deviation|")
        ax1.set_xlabel("t [s]")
        ax0.legend(fontsize=7, ncol=2)
        save(fig, f"{sig}_profile")

    cols, data = series["quaternion_vs_w"]
    fig, ax = plt.subplots(figsize=(7, 4))
    for j in range(1, 5):
        ax.plot(data[:, 0], data[:, j], label=cols[j])
    ax.set_xlabel("w")
    ax.legend()
    save(fig, "quaternion_vs_w")

    cols, data = series["u_vs_s"]
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    ax0.plot(data[:, 0], data[:, 1])
    ax0.set_ylabel("u")
    ax1.plot(data[:, 0], data[:, 3])
    ax1.set_ylabel("u error")
    ax1.set_xlabel("s [mm]")
    save(fig, "u_vs_s")

    cols, data = series["w_vs_s"]
    _, pts = series["sync_points"]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(data[:, 0], data[:, 1])
    ax.plot(pts[:, 0], pts[:, 1], "o", ms=3)
    ax.set_xlabel("s [mm]")
    ax.set_ylabel("w")
    save(fig, "w_vs_s")

    cols, data = series["time_profile"]
    fig, axes = plt.subplots(3, 1, figsize=(8, 7), sharex=True)
    for k, ax in enumerate(axes, start=1):
        ax.plot(data[:, 0], data[:, 1 + k], label="optimized")
        ax.plot(data[:, 0], data[:, 5 + k], "--", label="uniform")
        ax.set_ylabel(cols[1 + k].split("_", 1)[1])
    axes[0].legend()
    axes[-1].set_xlabel("t [s]")
    save(fig, "time_profile")

    cols, data = series["joint_profile"]
    fig, axes = plt.subplots(4, 1, figsize=(8, 9), sharex=True)
    for k, ax in enumerate(axes):
        for i in range(4):
            ax.plot(data[:, 0], data[:, 1 + 4 * k + i], lw=0.8, label=f"j{i + 1}")
        ax.set_ylabel(cols[1 + 4 * k].split("_", 1)[1])
    axes[0].legend(ncol=4, fontsize=7)
    axes[-1].set_xlabel("t [s]")
    save(fig, "joint_profile")

    _, pts = series["path"]
    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(projection="3d")
    ax.plot(pts[:, 0], pts[:, 1], pts[:, 2])
    ax.set_xlabel("x [mm]")
    ax.set_ylabel("y [mm]")
    ax.set_zlabel("z [mm]")
    save(fig, "path")
    return written


def export_plan(
    plan: MotionPlan,
    directory: str | Path,
    feed: float | None = None,
    dt: float | None = None,
    figures: bool = True,
) -> dict[str, Path]:
    """Write all plan artifacts into ``directory`` (created if needed).

    Produces ``samples.csv``, ``joint_lut.csv``, ``metrics.json``,
    ``metrics.schema.json``, ``compare.csv``, ``plotdata/*.csv`` and, with
    ``figures``, ``figures/*.png``.

    Raises:
        IoError: the directory or a file cannot be written.
    """
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    feed = feed or plan.config.compare_feed
    dt = dt or plan.config.dt_offline
    written: dict[str, Path] = {}

    cols, data = samples_table(plan)
    _write_csv(out / "samples.csv", cols, data, comment="offline samples; lengths mm, angles deg, time s")
    written["samples"] = out / "samples.csv"

    write_joint_lut(plan.lut, out / "joint_lut.csv")
    written["joint_lut"] = out / "joint_lut.csv"

    streams = interpolator_streams(plan, feed, dt)
    reports = compare_interpolators(plan, streams=streams)
    write_compare_csv(reports, out / "compare.csv")
    written["compare"] = out / "compare.csv"

    doc = metrics_document(plan, reports, compare_time_allocation(plan), feed, dt)
    validate_metrics(doc)
    _write_text(out / "metrics.json", json.dumps(doc, indent=2))
    _write_text(out / "metrics.schema.json", json.dumps(METRICS_SCHEMA, indent=2))
    written["metrics"] = out / "metrics.json"

    series = plot_series(plan, streams)
    for stem, (cols, data) in series.items():
        _write_csv(out / "plotdata" / f"{stem}.csv", cols, data)
    written["plotdata"] = out / "plotdata"
    if figures:
        (out / "figures").mkdir(exist_ok=True)
        render_figures(series, out / "figures")
        written["figures"] = out / "figures"
    return written
