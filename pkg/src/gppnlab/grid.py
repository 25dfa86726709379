"""Maze state spaces and the three deterministic transition kernels.

Coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row of
``MazeGrid.cells``; North decreases ``y``. Orientations for the
differential-drive kernel are ``0=N, 1=E, 2=S, 3=W``.
"""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import ContractError

# (dx, dy) per action; NEWS uses the first four, Moore all eight.
MOVES = (
    (0, -1),   # N
    (1, 0),    # E
    (-1, 0),   # W
    (0, 1),    # S
    (1, -1),   # NE
    (-1, -1),  # NW
    (1, 1),    # SE
    (-1, 1),   # SW
)
HEADINGS = ((0, -1), (1, 0), (0, 1), (-1, 0))  # N, E, S, W

FORWARD, TURN_LEFT, TURN_RIGHT = 0, 1, 2


class Kernel(enum.Enum):
    NEWS = 0
    MOORE = 1
    DIFFDRIVE = 2

    @property
    def action_count(self) -> int:
        return (4, 8, 3)[self.value]

    @property
    def orientation_count(self) -> int:
        return 4 if self is Kernel.DIFFDRIVE else 1

    @property
    def action_names(self) -> tuple:
        if self is Kernel.DIFFDRIVE:
            return ("forward", "left", "right")
        return ("N", "E", "W", "S", "NE", "NW", "SE", "SW")[: self.action_count]

    @classmethod
    def parse(cls, value) -> "Kernel":
        """Accept a Kernel, its integer code, or a case-insensitive name."""
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().upper().replace("_", "").replace("-", "")
        aliases = {"DIFFERENTIALDRIVE": "DIFFDRIVE", "DD": "DIFFDRIVE"}
        key = aliases.get(key, key)
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown transition kernel {value!r}") from None


@dataclass(frozen=True)
class AgentState:
    x: int
    y: int
    orientation: int = 0


@dataclass(frozen=True)
class GoalSpec:
    goal: AgentState


def _connected(cells: np.ndarray) -> bool:
    ys, xs = np.nonzero(cells)
    if len(xs) == 0:
        return False
    seen = np.zeros_like(cells, dtype=bool)
    seen[ys[0], xs[0]] = True
    queue = deque([(xs[0], ys[0])])
    while queue:
        x, y = queue.popleft()
        for dx, dy in MOVES[:4]:
            nx, ny = x + dx, y + dy
            if 0 <= nx < cells.shape[1] and 0 <= ny < cells.shape[0]:
                if cells[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    queue.append((nx, ny))
    return int(seen.sum()) == len(xs)


class MazeGrid:
    """Immutable square occupancy map; ``cells[y, x]`` is True for open cells.

    Construction checks the invariants every consumer relies on: walls on
    the border, at least one open cell, and a 4-connected open region.
    """

    __slots__ = ("cells", "_hash")

    def __init__(self, cells):
        cells = np.array(cells, dtype=bool)
        if cells.ndim != 2 or cells.shape[0] != cells.shape[1] or cells.shape[0] < 1:
            raise ContractError(f"maze must be a square 2-D array, got shape {cells.shape}")
        if cells[0].any() or cells[-1].any() or cells[:, 0].any() or cells[:, -1].any():
            raise ContractError("border cells of a maze must be walls")
        if not cells.any():
            raise ContractError("maze has no open cell")
        if not _connected(cells):
            raise ContractError("open cells of the maze are not 4-connected")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "_hash", hash((cells.shape[0], cells.tobytes())))

    def __setattr__(self, name, value):
        raise AttributeError("MazeGrid is immutable")

    @property
    def m(self) -> int:
        return self.cells.shape[0]

    def is_open(self, x: int, y: int) -> bool:
        return 0 <= x < self.m and 0 <= y < self.m and bool(self.cells[y, x])

    @property
    def n_open(self) -> int:
        return int(self.cells.sum())

    def __eq__(self, other):
        return isinstance(other, MazeGrid) and np.array_equal(self.cells, other.cells)

    def __hash__(self):
        return self._hash

    def __repr__(self):
        rows = ["".join("." if c else "#" for c in row) for row in self.cells]
        return "MazeGrid(\n  " + "\n  ".join(rows) + "\n)"

    def transpose(self) -> "MazeGrid":
        return MazeGrid(self.cells.T)


def _check_state(maze: MazeGrid, kernel: Kernel, s: AgentState):
    if not maze.is_open(s.x, s.y):
        raise ContractError(f"state {s} is not on an open cell")
    if not 0 <= s.orientation < kernel.orientation_count:
        raise ContractError(f"orientation {s.orientation} invalid for {kernel.name}")


def successor(maze: MazeGrid, kernel, s: AgentState, a: int) -> AgentState:
    """Deterministic next state; blocked moves leave the agent in place."""
    kernel = Kernel.parse(kernel)
    _check_state(maze, kernel, s)
    if not 0 <= a < kernel.action_count:
        raise ContractError(f"action {a} invalid for {kernel.name}")
    if kernel is Kernel.DIFFDRIVE:
        if a == TURN_LEFT:
            return AgentState(s.x, s.y, (s.orientation - 1) % 4)
        if a == TURN_RIGHT:
            return AgentState(s.x, s.y, (s.orientation + 1) % 4)
        dx, dy = HEADINGS[s.orientation]
    else:
        dx, dy = MOVES[a]
    nx, ny = s.x + dx, s.y + dy
    if maze.is_open(nx, ny):
        return AgentState(nx, ny, s.orientation)
    return s


def enumerate_states(maze: MazeGrid, kernel) -> list:
    """All states, open cells in row-major order with orientation varying fastest."""
    kernel = Kernel.parse(kernel)
    ys, xs = np.nonzero(maze.cells)
    return [
        AgentState(int(x), int(y), o)
        for y, x in zip(ys, xs)
        for o in range(kernel.orientation_count)
    ]


def goal_map(goal: GoalSpec, kernel, m: int) -> np.ndarray:
    kernel = Kernel.parse(kernel)
    g = goal.goal
    if not (0 <= g.x < m and 0 <= g.y < m and 0 <= g.orientation < kernel.orientation_count):
        raise ContractError(f"goal {g} out of range for m={m}, {kernel.name}")
    out = np.zeros((kernel.orientation_count, m, m), dtype=np.float64)
    out[g.orientation, g.y, g.x] = 1.0
    return out


class StateSpace:
    """Array view of a maze's states under a kernel.

    ``states`` is an ``(S, 3)`` array of ``(x, y, orientation)`` rows in
    :func:`enumerate_states` order, ``index`` maps ``[o, y, x]`` to a state
    index (-1 on walls) and ``successors`` is the ``(S, A)`` table of next
    state indices.
    """

    def __init__(self, maze: MazeGrid, kernel):
        self.maze = maze
        self.kernel = Kernel.parse(kernel)

    @cached_property
    def states(self) -> np.ndarray:
        ys, xs = np.nonzero(self.maze.cells)
        n_o = self.kernel.orientation_count
        out = np.empty((len(xs) * n_o, 3), dtype=np.int64)
        out[:, 0] = np.repeat(xs, n_o)
        out[:, 1] = np.repeat(ys, n_o)
        out[:, 2] = np.tile(np.arange(n_o), len(xs))
        return out

    @property
    def n_states(self) -> int:
        return len(self.states)

    @cached_property
    def index(self) -> np.ndarray:
        m = self.maze.m
        idx = np.full((self.kernel.orientation_count, m, m), -1, dtype=np.int64)
        st = self.states
        idx[st[:, 2], st[:, 1], st[:, 0]] = np.arange(len(st))
        return idx

    def state_index(self, s: AgentState) -> int:
        i = int(self.index[s.orientation, s.y, s.x])
        if i < 0:
            raise ContractError(f"{s} is not a state of this maze")
        return i

    @cached_property
    def successors(self) -> np.ndarray:
        st = self.states
        x, y, o = st[:, 0], st[:, 1], st[:, 2]
        own = np.arange(len(st))
        cells = self.maze.cells
        m = self.maze.m

        def move(dx, dy):
            nx, ny = x + dx, y + dy
            inside = (nx >= 0) & (nx < m) & (ny >= 0) & (ny < m)
            nx_c, ny_c = np.clip(nx, 0, m - 1), np.clip(ny, 0, m - 1)
            ok = inside & cells[ny_c, nx_c]
            return np.where(ok, self.index[o, ny_c, nx_c], own)

        if self.kernel is Kernel.DIFFDRIVE:
            head = np.array(HEADINGS)
            fwd = move(head[o, 0], head[o, 1])
            left = self.index[(o - 1) % 4, y, x]
            right = self.index[(o + 1) % 4, y, x]
            table = np.stack([fwd, left, right], axis=1)
        else:
            table = np.stack([move(dx, dy) for dx, dy in MOVES[: self.kernel.action_count]], axis=1)
        table.setflags(write=False)
        return table
