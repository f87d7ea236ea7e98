"""Hierarchical solver for zero-sum pursuit-evasion games on grid worlds."""

from .abstraction import (
    Partition,
    PartitionError,
    compute_topology,
    infer_room_grid,
    partition_from_blocks,
    partition_from_file,
    single_superstate,
)
from .estimators import FlatNashSolver, HierarchicalSolver
from .flat_solver import ConvergenceError, MarkovGame, build_peg_game, exploitability, shapley_solve
from .gridworld import (
    EVADER_ACTIONS,
    PURSUER_ACTIONS,
    ActionSet,
    AgentRole,
    GridMap,
    MapError,
    PegEnv,
    parse_map,
    room_grid_map,
)
from .matrix_game import LPError, solve_matrix_game
from .simulator import run_episode, run_matchups

__version__ = "0.1.0"

__all__ = [
    "ActionSet",
    "AgentRole",
    "ConvergenceError",
    "EVADER_ACTIONS",
    "FlatNashSolver",
    "GridMap",
    "HierarchicalSolver",
    "LPError",
    "MapError",
    "MarkovGame",
    "PURSUER_ACTIONS",
    "Partition",
    "PartitionError",
    "PegEnv",
    "build_peg_game",
    "compute_topology",
    "exploitability",
    "infer_room_grid",
    "parse_map",
    "partition_from_blocks",
    "partition_from_file",
    "room_grid_map",
    "run_episode",
    "run_matchups",
    "shapley_solve",
    "single_superstate",
    "solve_matrix_game",
]
