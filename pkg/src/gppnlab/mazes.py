"""Recursive-backtracker maze generation with random wall decimation.

Rooms live on odd ``(x, y)`` coordinates and the cells between two
horizontally or vertically adjacent rooms are wall slots. Pillars (both
coordinates even) and the border are never opened.

Every maze draws from its own ``numpy.random.Generator(PCG64(seed))``;
the dataset builder derives that seed as ``base_seed ^ index``. Draw
order is fixed: the decimation probability, the start room, one integer
per carving step, one uniform per wall slot (row-major), then the goal.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .exceptions import ConfigError
from .grid import AgentState, GoalSpec, Kernel, MazeGrid

_ROOM_STEPS = ((0, -2), (2, 0), (-2, 0), (0, 2))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class MazeGenConfig:
    m: int = 15
    rng_seed: int = 0
    # None samples d ~ U[0, 1] per maze.
    decimation: Optional[float] = None

    def __post_init__(self):
        if not isinstance(self.m, (int, np.integer)) or self.m < 5 or self.m % 2 == 0:
            raise ConfigError(f"maze size must be an odd integer >= 5, got {self.m!r}")
        if self.decimation is not None and not 0.0 <= self.decimation <= 1.0:
            raise ConfigError(f"decimation must lie in [0, 1], got {self.decimation!r}")


def wall_slots(m: int) -> np.ndarray:
    """``(n, 2)`` array of ``(x, y)`` wall slots between adjacent rooms, row-major."""
    slots = [
        (x, y)
        for y in range(1, m - 1)
        for x in range(1, m - 1)
        if (x % 2) != (y % 2)
    ]
    return np.array(slots, dtype=np.int64).reshape(-1, 2)


def carve(m: int, rng: np.random.Generator) -> np.ndarray:
    """Spanning tree over the room lattice by iterative depth-first backtracking."""
    cells = np.zeros((m, m), dtype=bool)
    rooms = (m - 1) // 2
    start = (2 * int(rng.integers(rooms)) + 1, 2 * int(rng.integers(rooms)) + 1)
    cells[start[1], start[0]] = True
    stack = [start]
    while stack:
        x, y = stack[-1]
        options = [
            (x + dx, y + dy)
            for dx, dy in _ROOM_STEPS
            if 0 < x + dx < m - 1 and 0 < y + dy < m - 1 and not cells[y + dy, x + dx]
        ]
        if not options:
            stack.pop()
            continue
        nx, ny = options[int(rng.integers(len(options)))]
        cells[(y + ny) // 2, (x + nx) // 2] = True
        cells[ny, nx] = True
        stack.append((nx, ny))
    return cells


def generate_maze_with_rng(cfg: MazeGenConfig, rng: np.random.Generator) -> tuple:
    """Generate a maze from an existing stream; returns ``(maze, d)``."""
    d = float(rng.random())
    if cfg.decimation is not None:
        d = float(cfg.decimation)
    cells = carve(cfg.m, rng)
    slots = wall_slots(cfg.m)
    u = rng.random(len(slots))
    chosen = slots[u < d]
    cells[chosen[:, 1], chosen[:, 0]] = True
    return MazeGrid(cells), d


def generate_maze(cfg: MazeGenConfig) -> MazeGrid:
    maze, _ = generate_maze_with_rng(cfg, make_rng(cfg.rng_seed))
    return maze


def sample_goal(maze: MazeGrid, kernel: Union[Kernel, str], rng: np.random.Generator) -> GoalSpec:
    kernel = Kernel.parse(kernel)
    ys, xs = np.nonzero(maze.cells)
    i = int(rng.integers(len(xs)))
    orient = int(rng.integers(4)) if kernel is Kernel.DIFFDRIVE else 0
    return GoalSpec(AgentState(int(xs[i]), int(ys[i]), orient))
