"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numbers

from .abstraction import Partition, PartitionError
from .gridworld import PegEnv


def check_env(env) -> PegEnv:
    if not isinstance(env, PegEnv):
        raise TypeError(f"expected a PegEnv, got {type(env).__name__}")
    return env


def check_tol(tol, name: str = "tol") -> float:
    if not isinstance(tol, numbers.Real) or not tol > 0:
        raise ValueError(f"{name} must be a positive number, got {tol!r}")
    return float(tol)


def check_positive_int(value, name: str) -> int:
    if not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_partition(env: PegEnv, partition) -> Partition:
    if not isinstance(partition, Partition):
        raise TypeError(f"expected a Partition, got {type(partition).__name__}")
    if partition.labels.size != env.n_cells:
        raise PartitionError(
            f"partition labels {partition.labels.size} cells, map has {env.n_cells} free cells"
        )
    return partition
