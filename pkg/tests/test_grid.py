import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gppnlab.exceptions import ContractError
from gppnlab.grid import (
    FORWARD,
    TURN_LEFT,
    TURN_RIGHT,
    AgentState,
    GoalSpec,
    Kernel,
    MazeGrid,
    StateSpace,
    enumerate_states,
    goal_map,
    successor,
)
from gppnlab.mazes import MazeGenConfig, generate_maze

from conftest import open_room

N, E, W, S = 0, 1, 2, 3


def test_kernel_counts():
    assert (Kernel.NEWS.action_count, Kernel.NEWS.orientation_count) == (4, 1)
    assert (Kernel.MOORE.action_count, Kernel.MOORE.orientation_count) == (8, 1)
    assert (Kernel.DIFFDRIVE.action_count, Kernel.DIFFDRIVE.orientation_count) == (3, 4)


@pytest.mark.parametrize("name", ["news", "Moore", "diff-drive", "DIFFDRIVE", 2])
def test_kernel_parse(name):
    assert isinstance(Kernel.parse(name), Kernel)


def test_maze_invariants():
    with pytest.raises(ContractError):
        MazeGrid(np.zeros((5, 5), dtype=bool))
    cells = np.zeros((5, 5), dtype=bool)
    cells[0, 2] = True
    with pytest.raises(ContractError):
        MazeGrid(cells)
    cells = np.zeros((5, 5), dtype=bool)
    cells[1, 1] = cells[3, 3] = True
    with pytest.raises(ContractError):
        MazeGrid(cells)


def test_maze_is_immutable(room5):
    with pytest.raises(ValueError):
        room5.cells[1, 1] = False


def test_news_north(room5):
    assert successor(room5, Kernel.NEWS, AgentState(2, 2), N) == AgentState(2, 1)


@pytest.mark.parametrize("kernel,action,start", [
    (Kernel.NEWS, N, AgentState(2, 1)),
    (Kernel.NEWS, W, AgentState(1, 2)),
    (Kernel.MOORE, 4, AgentState(3, 1)),  # NE into the corner wall
    (Kernel.DIFFDRIVE, FORWARD, AgentState(2, 1, 0)),
])
def test_blocked_move_is_self_loop(room5, kernel, action, start):
    assert successor(room5, kernel, start, action) == start


def test_diffdrive_turns(room5):
    s = AgentState(2, 2, 0)
    assert successor(room5, Kernel.DIFFDRIVE, s, TURN_RIGHT) == AgentState(2, 2, 1)
    assert successor(room5, Kernel.DIFFDRIVE, s, TURN_LEFT) == AgentState(2, 2, 3)
    assert successor(room5, Kernel.DIFFDRIVE, AgentState(2, 2, 1), FORWARD) == AgentState(3, 2, 1)


def test_successor_contract(room5):
    with pytest.raises(ContractError):
        successor(room5, Kernel.NEWS, AgentState(0, 0), 0)
    with pytest.raises(ContractError):
        successor(room5, Kernel.NEWS, AgentState(2, 2), 4)
    with pytest.raises(ContractError):
        successor(room5, Kernel.NEWS, AgentState(2, 2, 1), 0)


def test_moore_interior_has_eight_distinct_successors(room5):
    nxt = {successor(room5, Kernel.MOORE, AgentState(2, 2), a) for a in range(8)}
    assert len(nxt) == 8
    assert AgentState(2, 2) not in nxt


def test_enumerate_states_counts():
    cells = np.zeros((5, 5), dtype=bool)
    cells[1, 1:4] = True
    cells[2, 1] = True
    maze = MazeGrid(cells)
    assert len(enumerate_states(maze, Kernel.NEWS)) == 4
    states = enumerate_states(maze, Kernel.DIFFDRIVE)
    assert len(states) == 16
    assert states[:5] == [AgentState(1, 1, o) for o in range(4)] + [AgentState(2, 1, 0)]


def test_goal_maps():
    g = goal_map(GoalSpec(AgentState(3, 4)), Kernel.NEWS, 15)
    assert g.shape == (1, 15, 15) and g[0, 4, 3] == 1.0 and g.sum() == 1.0
    g = goal_map(GoalSpec(AgentState(3, 4, 1)), Kernel.DIFFDRIVE, 15)
    assert g.shape == (4, 15, 15) and g[1, 4, 3] == 1.0 and g.sum() == 1.0


@pytest.mark.parametrize("kernel", list(Kernel))
def test_state_space_matches_scalar_successor(kernel):
    maze = generate_maze(MazeGenConfig(m=9, rng_seed=3))
    sp = StateSpace(maze, kernel)
    states = enumerate_states(maze, kernel)
    assert [AgentState(*map(int, row)) for row in sp.states] == states
    for i, s in enumerate(states):
        for a in range(kernel.action_count):
            assert states[sp.successors[i, a]] == successor(maze, kernel, s, a)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), d=st.floats(0, 1), kernel=st.sampled_from(list(Kernel)))
def test_successor_closure_and_determinism(seed, d, kernel):
    maze = generate_maze(MazeGenConfig(m=7, rng_seed=seed, decimation=d))
    for s in enumerate_states(maze, kernel):
        for a in range(kernel.action_count):
            t = successor(maze, kernel, s, a)
            assert maze.is_open(t.x, t.y) and 0 <= t.orientation < kernel.orientation_count
            assert t == successor(maze, kernel, s, a)
