import numpy as np
import pytest

from seal.grid import GridGeometry
from seal.world import WorldMap


def box_world(width=10.0, height=10.0, resolution=0.2, rects=()):
    """Closed rectangular world with optional axis-aligned obstacles (meters)."""
    h, w = int(round(height / resolution)), int(round(width / resolution))
    cells = np.zeros((h, w), dtype=np.uint8)
    for x0, y0, x1, y1 in rects:
        cells[int(y0 / resolution):int(np.ceil(y1 / resolution)),
              int(x0 / resolution):int(np.ceil(x1 / resolution))] = 1
    return WorldMap(cells, resolution, name="box")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_geometry():
    return GridGeometry(10, 10, 0.5)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; printed in the summary."""
    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
