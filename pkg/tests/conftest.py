import math

import numpy as np
import pytest

from eip_stereo.circuit import CircuitConfig, simulate_stream
from eip_stereo.core_types import LightTrajectory, PixelThresholds
from eip_stereo.scene import make_sphere_scene


@pytest.fixture(scope="session")
def traj45():
    return LightTrajectory.circular(math.pi / 4, 1.0)


@pytest.fixture(scope="session")
def small_diffuse(traj45):
    """24x24 noiseless diffuse sphere, offset ratio 0.1, three cycles."""
    scene = make_sphere_scene(24, "diffuse", offset_light=0.1)
    th = PixelThresholds.uniform(24, 24, 0.05, -0.05)
    stream = simulate_stream(scene, traj45, 3, CircuitConfig(thresholds=th))
    return scene, th, stream


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_REPORT: list[str] = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""
    def add(name: str, ok: bool, detail: str) -> bool:
        _REPORT.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        print(_REPORT[-1])
        return ok
    return add


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
