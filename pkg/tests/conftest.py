from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import pkm_motion as pm
from pkm_motion.errors import PkmMotionWarning

settings.register_profile(
    "repo",
    max_examples=40,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def spherical_plan() -> pm.MotionPlan:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PkmMotionWarning)
        return pm.plan(pm.spherical_section_path())


@pytest.fixture(scope="session")
def fan_plan() -> pm.MotionPlan:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PkmMotionWarning)
        return pm.plan(pm.fan_path())


@pytest.fixture(scope="session")
def geometry() -> pm.RobotGeometry:
    return pm.default_geometry()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def circle_points(n: int = 12, radius: float = 50.0, sweep: float = np.pi / 2) -> np.ndarray:
    th = np.linspace(0.0, sweep, n)
    return np.column_stack([radius * np.cos(th), radius * np.sin(th)])


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
