from __future__ import annotations

import pytest

from hierpeg import (
    FlatNashSolver,
    HierarchicalSolver,
    PegEnv,
    parse_map,
    partition_from_blocks,
    partition_from_file,
)
from hierpeg.config import resolve_map

OPEN3 = "...\n...\n...\n"

# two 3x3 rooms joined by a one-cell door in the middle of the shared wall
TWO_ROOMS = (
    "#########\n"
    "#...#...#\n"
    "#.......#\n"
    "#...#...#\n"
    "#########\n"
)
TWO_ROOMS_LABELS = (
    "-1,-1,-1,-1,-1,-1,-1,-1,-1\n"
    "-1,0,0,0,-1,1,1,1,-1\n"
    "-1,0,0,0,0,1,1,1,-1\n"
    "-1,0,0,0,-1,1,1,1,-1\n"
    "-1,-1,-1,-1,-1,-1,-1,-1,-1\n"
)


def two_room_env(slip: float = 0.0, radius: int = 1) -> PegEnv:
    return PegEnv(parse_map(TWO_ROOMS), capture_radius=radius, slip=slip)


def two_room_partition(env: PegEnv):
    return partition_from_file(env.map, TWO_ROOMS_LABELS)


@pytest.fixture(scope="session")
def env2():
    return PegEnv(parse_map(resolve_map("rooms2x2")))


@pytest.fixture(scope="session")
def flat2(env2):
    return FlatNashSolver().fit(env2)


@pytest.fixture(scope="session")
def part2(env2):
    return partition_from_blocks(env2.map, 1)


@pytest.fixture(scope="session")
def hier2(env2, part2):
    return HierarchicalSolver().fit(env2, part2)


@pytest.fixture(scope="session")
def two_rooms():
    env = two_room_env()
    return env, two_room_partition(env)


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
