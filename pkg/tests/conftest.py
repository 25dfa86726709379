import numpy as np
import pytest

from gppnlab.grid import MazeGrid


def open_room(m):
    """m x m map with a wall border and an open interior."""
    cells = np.zeros((m, m), dtype=bool)
    cells[1:-1, 1:-1] = True
    return MazeGrid(cells)


@pytest.fixture
def room5():
    return open_room(5)


@pytest.fixture
def room7():
    return open_room(7)


ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name}"
    if detail:
        line += f" | {detail}"
    ACCEPTANCE_LINES.append((number, line))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
        terminalreporter.write_line(line)
