"""Planning samples, dataset generation and the binary dataset file.

File layout (all integers little-endian)::

    header   magic "GPPN" | version u16 | m u16 | kernel u8 | count u32
             | generator seed u64 | tie-break policy u8           (22 bytes)
    record   maze bitmap: m*m bits row-major, MSB first, padded to a byte
             goal: orientation u8, x u16, y u16
             labels: u8 per state (enumerate_states order), 0xFE = goal
             distances: u16 per state, same order

A record's state count follows from its bitmap, so records are parsed
sequentially. Kernel codes: 0=NEWS, 1=MOORE, 2=DIFFDRIVE. Tie-break
policy 0 means "lowest action index".
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional

import numpy as np

from .exceptions import ContractError, DatasetFormatError
from .grid import AgentState, GoalSpec, Kernel, MazeGrid, StateSpace, goal_map
from .mazes import MazeGenConfig, generate_maze_with_rng, make_rng, sample_goal
from .oracle import STAY, bfs_distances, optimal_labels

MAGIC = b"GPPN"
VERSION = 1
TIE_LOWEST_INDEX = 0
LABEL_GOAL = 0xFE
LABEL_RESERVED = 0xFF
_HEADER = struct.Struct("<4sHHBIQB")


@dataclass(eq=False)
class PlanningSample:
    maze: MazeGrid
    kernel: Kernel
    goal: GoalSpec
    labels: np.ndarray
    distances: np.ndarray

    @cached_property
    def space(self) -> StateSpace:
        return StateSpace(self.maze, self.kernel)

    @property
    def goal_index(self) -> int:
        return self.space.state_index(self.goal.goal)

    def input_maps(self, dtype=np.float32) -> np.ndarray:
        """``(1 + O, m, m)``: wall indicator channel followed by the goal map."""
        m = self.maze.m
        walls = (~self.maze.cells).astype(dtype)[None]
        return np.concatenate([walls, goal_map(self.goal, self.kernel, m).astype(dtype)])

    def label_grid(self) -> np.ndarray:
        """``(O, m, m)`` action labels, -1 on walls and at the goal."""
        m = self.maze.m
        grid = np.full((self.kernel.orientation_count, m, m), -1, dtype=np.int64)
        st = self.space.states
        grid[st[:, 2], st[:, 1], st[:, 0]] = self.labels
        return grid

    def __eq__(self, other):
        return (
            isinstance(other, PlanningSample)
            and self.maze == other.maze
            and self.kernel is other.kernel
            and self.goal == other.goal
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.distances, other.distances)
        )


def make_sample(maze: MazeGrid, kernel, goal: GoalSpec) -> PlanningSample:
    kernel = Kernel.parse(kernel)
    space = StateSpace(maze, kernel)
    dist = bfs_distances(maze, kernel, goal, space=space)
    labels = optimal_labels(dist, maze, kernel, space=space)
    sample = PlanningSample(maze, kernel, goal, labels, dist)
    sample.space = space
    return sample


@dataclass(eq=False)
class PlanningDataset:
    m: int
    kernel: Kernel
    samples: List[PlanningSample] = field(default_factory=list)
    seed: int = 0
    tie_break: int = TIE_LOWEST_INDEX

    def __post_init__(self):
        self.kernel = Kernel.parse(self.kernel)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, key):
        if isinstance(key, slice):
            return PlanningDataset(self.m, self.kernel, self.samples[key], self.seed, self.tie_break)
        if isinstance(key, (list, np.ndarray)):
            return PlanningDataset(self.m, self.kernel, [self.samples[int(i)] for i in key],
                                   self.seed, self.tie_break)
        return self.samples[key]

    def __eq__(self, other):
        return (
            isinstance(other, PlanningDataset)
            and (self.m, self.kernel, self.seed, self.tie_break)
            == (other.m, other.kernel, other.seed, other.tie_break)
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.samples, other.samples))
        )

    def inputs(self, dtype=np.float32) -> np.ndarray:
        return np.stack([s.input_maps(dtype) for s in self.samples])

    def label_grids(self) -> np.ndarray:
        return np.stack([s.label_grid() for s in self.samples])

    @property
    def n_states(self) -> int:
        return sum(s.space.n_states for s in self.samples)


def make_dataset(m: int, kernel, count: int, seed: int = 0,
                 decimation: Optional[float] = None) -> PlanningDataset:
    """``count`` samples; sample ``i`` draws everything from ``PCG64(seed ^ i)``."""
    kernel = Kernel.parse(kernel)
    samples = []
    for i in range(count):
        cfg = MazeGenConfig(m=m, rng_seed=seed ^ i, decimation=decimation)
        rng = make_rng(cfg.rng_seed)
        maze, _ = generate_maze_with_rng(cfg, rng)
        goal = sample_goal(maze, kernel, rng)
        samples.append(make_sample(maze, kernel, goal))
    return PlanningDataset(m, kernel, samples, seed=seed)


# Split files of one generation run use seeds offset far beyond any sample
# index so the per-sample streams never collide.
SPLIT_NAMES = ("train", "val", "test")


def split_seed(seed: int, split: int) -> int:
    return (int(seed) + (split << 32)) & 0xFFFFFFFFFFFFFFFF


def make_splits(m, kernel, counts, seed=0, decimation=None) -> dict:
    return {
        name: make_dataset(m, kernel, n, split_seed(seed, k), decimation)
        for k, (name, n) in enumerate(zip(SPLIT_NAMES, counts))
    }


# -- serialization -------------------------------------------------------------

def dumps(ds: PlanningDataset) -> bytes:
    m = ds.m
    out = [_HEADER.pack(MAGIC, VERSION, m, ds.kernel.value, len(ds),
                        int(ds.seed) & 0xFFFFFFFFFFFFFFFF, ds.tie_break)]
    for s in ds.samples:
        if s.maze.m != m or s.kernel is not ds.kernel:
            raise ContractError("sample size or kernel differs from the dataset header")
        out.append(np.packbits(s.maze.cells.ravel()).tobytes())
        g = s.goal.goal
        out.append(struct.pack("<BHH", g.orientation, g.x, g.y))
        labels = np.where(s.labels == STAY, LABEL_GOAL, s.labels).astype("<u1")
        out.append(labels.tobytes())
        out.append(np.asarray(s.distances).astype("<u2").tobytes())
    return b"".join(out)


def loads(data: bytes) -> PlanningDataset:
    if len(data) < _HEADER.size:
        raise DatasetFormatError("file shorter than the dataset header", 0)
    magic, version, m, kcode, count, seed, tie = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}", 4)
    try:
        kernel = Kernel(kcode)
    except ValueError:
        raise DatasetFormatError(f"unknown kernel code {kcode}", 8) from None
    pos = _HEADER.size
    nbits = (m * m + 7) // 8
    n_o = kernel.orientation_count
    samples = []
    for k in range(count):
        start = pos
        if pos + nbits + 5 > len(data):
            raise DatasetFormatError(f"record {k} truncated", pos)
        bits = np.unpackbits(np.frombuffer(data, np.uint8, nbits, pos))[: m * m]
        try:
            maze = MazeGrid(bits.reshape(m, m).astype(bool))
        except ContractError as exc:
            raise DatasetFormatError(f"record {k}: invalid maze ({exc})", start) from None
        pos += nbits
        orient, gx, gy = struct.unpack_from("<BHH", data, pos)
        pos += 5
        n = maze.n_open * n_o
        if pos + 3 * n > len(data):
            raise DatasetFormatError(f"record {k} truncated in label/distance maps", pos)
        raw = np.frombuffer(data, "<u1", n, pos).astype(np.int64)
        if np.any(raw == LABEL_RESERVED):
            raise DatasetFormatError(f"record {k}: reserved label value 0xFF", pos)
        labels = np.where(raw == LABEL_GOAL, STAY, raw)
        pos += n
        dist = np.frombuffer(data, "<u2", n, pos).astype(np.int64)
        pos += 2 * n
        goal = GoalSpec(AgentState(gx, gy, orient))
        if not maze.is_open(gx, gy) or orient >= n_o:
            raise DatasetFormatError(f"record {k}: goal {goal.goal} is not a valid state", start + nbits)
        samples.append(PlanningSample(maze, kernel, goal, labels, dist))
    if pos != len(data):
        raise DatasetFormatError(f"{len(data) - pos} trailing bytes after {count} records", pos)
    return PlanningDataset(m, kernel, samples, seed=seed, tie_break=tie)


def save_dataset(ds: PlanningDataset, path):
    with open(path, "wb") as fh:
        fh.write(dumps(ds))


def load_dataset(path) -> PlanningDataset:
    with open(path, "rb") as fh:
        return loads(fh.read())


def check_dataset(ds: PlanningDataset, recompute: bool = True) -> List[str]:
    """Human-readable invariant violations; an empty list means the data is sound."""
    problems = []
    for k, s in enumerate(ds.samples):
        succ = s.space.successors
        dist, labels = np.asarray(s.distances), np.asarray(s.labels)
        if len(dist) != s.space.n_states or len(labels) != s.space.n_states:
            problems.append(f"sample {k}: map length does not match state count")
            continue
        g = s.goal_index
        if dist[g] != 0 or labels[g] != STAY:
            problems.append(f"sample {k}: goal distance/label not (0, stay)")
        others = np.arange(len(dist)) != g
        best = dist[succ].min(axis=1)
        if np.any(best[others] != dist[others] - 1):
            problems.append(f"sample {k}: distance map is not Bellman-consistent")
        stay = labels == STAY
        if np.any(stay[others]):
            problems.append(f"sample {k}: non-goal state carries the stay label")
        act = np.where(stay, 0, labels)
        if np.any(act >= succ.shape[1]) or np.any(act < 0):
            problems.append(f"sample {k}: label out of action range")
            continue
        moved = dist[succ[np.arange(len(act)), act]]
        if np.any(moved[others] != dist[others] - 1):
            problems.append(f"sample {k}: a label does not decrease distance")
        elif ds.tie_break == TIE_LOWEST_INDEX:
            first = np.argmax(dist[succ] == (dist - 1)[:, None], axis=1)
            if np.any(first[others] != act[others]):
                problems.append(f"sample {k}: a tie is not broken toward the lowest action index")
        if recompute and not np.array_equal(dist, bfs_distances(s.maze, s.kernel, s.goal, space=s.space)):
            problems.append(f"sample {k}: stored distances differ from BFS")
    return problems
