from __future__ import annotations

import json

import jsonschema
import numpy as np
import pytest

from pkm_motion import errors
from pkm_motion.io import (
    METRICS_SCHEMA,
    export_plan,
    fmt,
    load_joint_lut,
    load_waypoints,
    parse_waypoints,
    read_csv_table,
    validate_metrics,
    write_joint_lut,
    write_waypoints,
)
from pkm_motion.waypoints import fan_path

HEADER = "x_mm,y_mm,z_mm,alpha_deg,beta_deg,gamma_deg"


@pytest.fixture(scope="module")
def exported(spherical_plan, tmp_path_factory):
    out = tmp_path_factory.mktemp("export")
    return out, export_plan(spherical_plan, out)


class TestWaypointParsing:
    def test_comments_and_blank_lines(self):
        wp = parse_waypoints(f"# demo\n{HEADER}\n\n0,0,0,0,0,0\n# mid\n10,0,0,5,0,0\n")
        assert len(wp) == 2
        np.testing.assert_array_equal(wp.orientations[1], [5, 0, 0])

    def test_bad_header(self):
        with pytest.raises(errors.ParseError) as info:
            parse_waypoints("x,y,z\n1,2,3\n")
        assert info.value.line == 1

    def test_bad_number_names_line_and_column(self):
        text = f"{HEADER}\n0,0,0,0,0,0\n1,2,abc,0,0,0\n"
        with pytest.raises(errors.ParseError) as info:
            parse_waypoints(text)
        assert (info.value.line, info.value.column) == (3, "z_mm")
        assert "line 3" in str(info.value) and "z_mm" in str(info.value)

    def test_wrong_field_count(self):
        with pytest.raises(errors.ParseError) as info:
            parse_waypoints(f"# c\n{HEADER}\n0,0,0,0,0\n")
        assert info.value.line == 3

    def test_non_finite(self):
        with pytest.raises(errors.ParseError) as info:
            parse_waypoints(f"{HEADER}\n0,0,0,0,0,0\nnan,0,0,0,0,0\n")
        assert info.value.column == "x_mm"

    def test_empty_file(self):
        with pytest.raises(errors.ParseError):
            parse_waypoints("# nothing here\n")

    def test_duplicate_rows(self):
        with pytest.raises(errors.DuplicateConsecutiveWaypoint):
            parse_waypoints(f"{HEADER}\n1,1,1,0,0,0\n1,1,1,0,0,0\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(errors.IoError):
            load_waypoints(tmp_path / "nope.csv")

    def test_round_trip(self, tmp_path):
        wp = fan_path()
        write_waypoints(wp, tmp_path / "fan.csv")
        back = load_waypoints(tmp_path / "fan.csv")
        np.testing.assert_array_equal(back.positions, wp.positions)
        np.testing.assert_array_equal(back.orientations, wp.orientations)
        assert back.name == "fan"


def test_fmt_round_trips_doubles(rng):
    x = rng.normal(size=1000) * 10.0 ** rng.integers(-300, 300, 1000)
    assert all(float(fmt(v)) == v for v in x)


class TestJointLUTFile:
    def test_round_trip_is_exact(self, spherical_plan, tmp_path):
        write_joint_lut(spherical_plan.lut, tmp_path / "lut.csv")
        back = load_joint_lut(tmp_path / "lut.csv")
        np.testing.assert_array_equal(back.control_points, spherical_plan.lut.control_points)
        np.testing.assert_array_equal(back.starts, spherical_plan.lut.starts)
        t = 0.37 * spherical_plan.total_time
        np.testing.assert_array_equal(back.evaluate(t), spherical_plan.lut.evaluate(t))

    def test_inconsistent_timing(self, spherical_plan, tmp_path):
        path = tmp_path / "lut.csv"
        write_joint_lut(spherical_plan.lut, path)
        lines = path.read_text().splitlines()
        # shift the start time of one joint-2 row
        idx = next(i for i, ln in enumerate(lines) if ln.startswith("2,1,"))
        fields = lines[idx].split(",")
        fields[2] = fmt(float(fields[2]) + 1e-3)
        lines[idx] = ",".join(fields)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(errors.ParseError):
            load_joint_lut(path)

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "lut.csv"
        path.write_text("a,b,c,d\n1,2,3,4\n")
        with pytest.raises(errors.ParseError):
            load_joint_lut(path)


class TestExport:
    def test_files_written(self, exported):
        out, written = exported
        for name in ("samples.csv", "joint_lut.csv", "metrics.json", "metrics.schema.json", "compare.csv"):
            assert (out / name).is_file()
        pngs = sorted(p.name for p in (out / "figures").glob("*.png"))
        assert {"feed_profile.png", "u_vs_s.png", "path.png"} <= set(pngs)
        assert (out / "plotdata" / "u_vs_s.csv").is_file()
        assert set(written) >= {"samples", "joint_lut", "metrics", "compare", "plotdata", "figures"}

    def test_metrics_validate(self, exported, spherical_plan):
        out, _ = exported
        doc = json.loads((out / "metrics.json").read_text())
        validate_metrics(doc)
        schema = json.loads((out / "metrics.schema.json").read_text())
        assert schema == METRICS_SCHEMA
        assert doc["plan"]["total_time_s"] == spherical_plan.total_time
        assert doc["plan"]["tracking_error_mm"] <= 0.01

    def test_invalid_metrics_rejected(self, exported):
        out, _ = exported
        doc = json.loads((out / "metrics.json").read_text())
        del doc["plan"]["total_time_s"]
        with pytest.raises(jsonschema.ValidationError):
            validate_metrics(doc)

    def test_samples_table(self, exported, spherical_plan):
        out, _ = exported
        header, data = read_csv_table(out / "samples.csv")
        assert header[:6] == ["t_s", "s_mm", "x_mm", "y_mm", "z_mm", "alpha_deg"]
        np.testing.assert_array_equal(data[:, 0], spherical_plan.offline_times)
        np.testing.assert_allclose(data[:, 5], np.degrees(spherical_plan.offline_pose[:, 3]), rtol=1e-15)
        joints = data[:, header.index("j1_mm"):header.index("j4_mm") + 1]
        np.testing.assert_allclose(joints, spherical_plan.offline_joints, atol=1e-9)

    def test_compare_table(self, exported):
        out, _ = exported
        header, data = read_csv_table_with_labels(out / "compare.csv")
        assert header[0] == "method"
        assert [row[0] for row in data] == [
            "natural", "taylor1", "taylor2", "modifier(1e-08)", "modifier(1e-10)", "modifier(1e-12)",
        ]

    def test_unwritable_directory(self, spherical_plan, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(errors.IoError):
            export_plan(spherical_plan, blocker / "sub", figures=False)


def read_csv_table_with_labels(path):
    lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    rows = [ln.split(",") for ln in lines]
    return rows[0], rows[1:]
