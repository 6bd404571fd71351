import numpy as np
import pytest

from eventdeblur.events import EventIndex, FrameRecord
from eventdeblur.simulator import SimConfig, make_test_scene, simulate

C_TRUE = 0.23


@pytest.fixture(scope="session")
def bar_dataset():
    """64x64 translating bar, 110 sharp frames averaged 11 per blurred frame."""
    config = SimConfig(c_true=C_TRUE, rate=1000.0, blur_span=11, resolution=(64, 64))
    return simulate(make_test_scene("translating-bar", (64, 64), 110, 1.0), config)


@pytest.fixture(scope="session")
def small_dataset():
    """32x32 bar, 5 blurred frames; fast enough for per-test use."""
    config = SimConfig(c_true=C_TRUE, rate=1000.0, blur_span=11, resolution=(32, 32))
    return simulate(make_test_scene("translating-bar", (32, 32), 55, 1.0), config)


def make_index(events, resolution=(4, 4)):
    """EventIndex from (t, x, y, sigma) tuples."""
    if not events:
        return EventIndex.empty(resolution)
    t, x, y, s = zip(*events)
    return EventIndex(t, x, y, s, resolution)


def constant_frame(value, f=0.0, T=1.0, shape=(4, 4), name="f.pgm"):
    return FrameRecord(f=f, T=T, image=np.full(shape, value, dtype=np.float64), name=name)


ACCEPTANCE_LINES: list[str] = []


def report(name, ok, detail):
    """Record one acceptance verdict line and return ``ok``."""
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
