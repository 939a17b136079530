import math

import numpy as np
import pytest

from megadagger.trackworld import Lane, OccupancyGrid, load_shipped, make_world


def square_room(size_cells=100, res=0.1, border=1, origin=(0.0, 0.0)):
    cells = np.zeros((size_cells, size_cells), dtype=bool)
    cells[:border, :] = cells[-border:, :] = True
    cells[:, :border] = cells[:, -border:] = True
    return OccupancyGrid(res, origin, cells)


def square_loop(center=(5.0, 5.0), half=3.0, speed=3.0, radius=1.5):
    """Counter-clockwise square centerline with corners rounded to ``radius``."""
    cx, cy = center
    straight = half - radius
    pts = []
    # corner arc centers, visited counter-clockwise starting bottom-right
    for k, (sx, sy) in enumerate(((1, -1), (1, 1), (-1, 1), (-1, -1))):
        ax, ay = cx + sx * straight, cy + sy * straight
        start = -math.pi / 2 + k * math.pi / 2
        for u in np.linspace(0.0, math.pi / 2, 12, endpoint=False):
            pts.append((ax + radius * math.cos(start + u), ay + radius * math.sin(start + u), speed))
        # straight edge to the next corner
        ex, ey = ax + radius * math.cos(start + math.pi / 2), ay + radius * math.sin(start + math.pi / 2)
        tx, ty = -math.sin(start + math.pi / 2), math.cos(start + math.pi / 2)
        for t in np.linspace(0.0, 2 * straight, 10, endpoint=False):
            pts.append((ex + t * tx, ey + t * ty, speed))
    return Lane(np.array(pts))


@pytest.fixture(scope="session")
def room_world():
    """10 m x 10 m empty room with a 6 m square circuit in the middle."""
    return make_world(square_room(), square_loop(), name="room")


@pytest.fixture(scope="session")
def map1():
    return load_shipped("map1")


@pytest.fixture(scope="session")
def map2():
    return load_shipped("map2")


def pytest_terminal_summary(terminalreporter):
    acceptance = __import__("sys").modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
