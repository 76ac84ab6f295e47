import math

import numpy as np
import pytest

from pillarforge.model import Annotation, Box3D, Frame, PointCloud


def random_box(rng, center_spread=3.0, yaw=None):
    return Box3D(
        rng.uniform(-center_spread, center_spread),
        rng.uniform(-center_spread, center_spread),
        rng.uniform(-0.5, 0.5),
        rng.uniform(0.5, 5.0),
        rng.uniform(0.5, 3.0),
        rng.uniform(0.5, 2.5),
        rng.uniform(-math.pi, math.pi) if yaw is None else yaw,
    )


def overlapping_pair(rng):
    a = random_box(rng, center_spread=1.0)
    b = Box3D(
        a.cx + rng.uniform(-1.0, 1.0),
        a.cy + rng.uniform(-1.0, 1.0),
        a.cz + rng.uniform(-0.4, 0.4),
        rng.uniform(0.5, 5.0),
        rng.uniform(0.5, 3.0),
        rng.uniform(0.5, 2.5),
        rng.uniform(-math.pi, math.pi),
    )
    return a, b


def cloud_from(xyz, intensity=None, frame_id="f"):
    xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
    if intensity is None:
        intensity = np.zeros(len(xyz))
    return PointCloud(xyz, intensity, frame_id)


def points_in_local_box(rng, box, n, fill=0.9):
    loc = rng.uniform(-0.5, 0.5, size=(n, 3)) * fill * np.array([box.l, box.w, box.h])
    return box.to_world(loc)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def car_frame(rng):
    box = Box3D(5.0, 2.0, 0.75, 4.0, 2.0, 1.5, 0.3)
    obj = points_in_local_box(rng, box, 50)
    bg = np.column_stack([rng.uniform(-20, 20, 50), rng.uniform(-20, -10, 50), rng.uniform(0, 1, 50)])
    xyz = np.vstack([bg, obj])
    cloud = PointCloud(xyz, rng.uniform(0, 1, len(xyz)), "car")
    return Frame(cloud, (Annotation(box, "Car", "c0"),))


_ACCEPTANCE: list = []


@pytest.fixture
def verdict(capsys):
    """Record and print one PASS/FAIL line; returns the boolean for asserting."""
    def record(criterion: int, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion:>2}: {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
