"""Differentiable path planning on grid mazes: VIN, GPPN and Hyper-VIN."""
from .dataset import (
    PlanningDataset,
    PlanningSample,
    check_dataset,
    load_dataset,
    make_dataset,
    make_splits,
    save_dataset,
)
from .estimators import (
    GPPNPlanner,
    HyperVINPlanner,
    OraclePlanner,
    ValueIterationPlanner,
    VINPlanner,
    load_planner,
)
from .grid import AgentState, GoalSpec, Kernel, MazeGrid, enumerate_states, goal_map, successor
from .harness import TrainConfig, learning_speed, rollout_metrics, seed_variance, sweep, top_n_curve
from .mazes import MazeGenConfig, generate_maze, sample_goal
from .oracle import bfs_distances, optimal_labels, value_iteration
from .planners import PlannerConfig

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "GPPNPlanner",
    "GoalSpec",
    "HyperVINPlanner",
    "Kernel",
    "MazeGenConfig",
    "MazeGrid",
    "OraclePlanner",
    "PlannerConfig",
    "PlanningDataset",
    "PlanningSample",
    "TrainConfig",
    "VINPlanner",
    "ValueIterationPlanner",
    "bfs_distances",
    "check_dataset",
    "enumerate_states",
    "generate_maze",
    "goal_map",
    "learning_speed",
    "load_dataset",
    "load_planner",
    "make_dataset",
    "make_splits",
    "optimal_labels",
    "rollout_metrics",
    "sample_goal",
    "save_dataset",
    "seed_variance",
    "successor",
    "sweep",
    "top_n_curve",
    "value_iteration",
]
