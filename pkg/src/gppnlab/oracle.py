"""Exact planning ground truth on the true deterministic model.

Distance and label maps are 1-D arrays indexed in ``enumerate_states``
order. The goal's label is :data:`STAY`.
"""
from __future__ import annotations

import numpy as np

from .grid import GoalSpec, Kernel, MazeGrid, StateSpace

STAY = -1
UNREACHABLE = -1


def _space(maze, kernel, space=None) -> StateSpace:
    return space if space is not None else StateSpace(maze, kernel)


def bfs_distances(maze: MazeGrid, kernel, goal: GoalSpec, space: StateSpace = None) -> np.ndarray:
    """Shortest number of actions from every state to ``goal``.

    Breadth-first search backward from the goal over reversed edges.
    """
    sp = _space(maze, kernel, space)
    succ = sp.successors
    n = len(succ)
    # reversed adjacency in CSR form
    src = np.repeat(np.arange(n), succ.shape[1])
    dst = succ.ravel()
    keep = src != dst
    src, dst = src[keep], dst[keep]
    order = np.argsort(dst, kind="stable")
    src, dst = src[order], dst[order]
    starts = np.searchsorted(dst, np.arange(n + 1))

    dist = np.full(n, UNREACHABLE, dtype=np.int64)
    g = sp.state_index(goal.goal)
    dist[g] = 0
    frontier = np.array([g])
    level = 0
    while len(frontier):
        level += 1
        preds = np.concatenate([src[starts[v]:starts[v + 1]] for v in frontier])
        preds = np.unique(preds[dist[preds] == UNREACHABLE])
        dist[preds] = level
        frontier = preds
    return dist


def optimal_labels(dist: np.ndarray, maze: MazeGrid, kernel, space: StateSpace = None) -> np.ndarray:
    """Lowest-indexed action that reduces distance by exactly one."""
    sp = _space(maze, kernel, space)
    dist = np.asarray(dist)
    nxt = dist[sp.successors]
    good = nxt == (dist[:, None] - 1)
    goal = dist == 0
    if np.any(dist < 0) or not np.all(good.any(axis=1) | goal):
        raise RuntimeError("distance map is not Bellman-consistent with the maze")
    labels = np.argmax(good, axis=1).astype(np.int64)
    labels[goal] = STAY
    return labels


def value_iteration(maze: MazeGrid, kernel, goal: GoalSpec, gamma: float = 0.99,
                    iters: int = None, space: StateSpace = None):
    """Tabular value iteration with reward -1 per step and an absorbing goal.

    Returns ``(values, policy)``; the greedy policy breaks ties toward the
    lowest action index and the goal carries :data:`STAY`. ``iters``
    defaults to the number of states, which bounds the graph diameter.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    sp = _space(maze, kernel, space)
    succ = sp.successors
    g = sp.state_index(goal.goal)
    v = np.zeros(len(succ))
    for _ in range(len(succ) if iters is None else iters):
        q = -1.0 + gamma * v[succ]
        new = q.max(axis=1)
        new[g] = 0.0
        if np.array_equal(new, v):
            break
        v = new
    q = -1.0 + gamma * v[succ]
    policy = np.argmax(q, axis=1).astype(np.int64)
    policy[g] = STAY
    return v, policy


def rollout_lengths(successors: np.ndarray, policy: np.ndarray, goal_index: int,
                    max_steps: int) -> np.ndarray:
    """Steps each state needs to reach the goal under ``policy``; -1 on failure."""
    n = len(successors)
    lengths = np.full(n, -1, dtype=np.int64)
    cur = np.arange(n)
    lengths[cur == goal_index] = 0
    act = np.where(policy < 0, 0, policy)
    step = np.arange(n)
    nxt = successors[step, act]
    nxt[goal_index] = goal_index
    for t in range(1, max_steps + 1):
        cur = nxt[cur]
        hit = (cur == goal_index) & (lengths < 0)
        lengths[hit] = t
        if (lengths >= 0).all():
            break
    return lengths
