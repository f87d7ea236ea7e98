"""Pursuit-evasion games restricted to a joint superstate with absorbing periphery."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .abstraction import Partition, SuperstateTopology
from .flat_solver import MarkovGame, SolveStats, joint_rows, shapley_solve
from .gridworld import AgentRole, PegEnv

__all__ = [
    "LocalGame",
    "LocalSolution",
    "enumerate_terminal_superstates",
    "build_local_game",
    "solve_local_games",
]


@dataclass(eq=False)
class LocalGame:
    """``game`` is indexed by position in ``states`` (sorted joint indices)."""

    superstate: tuple[int, int]
    states: np.ndarray
    interior: np.ndarray
    game: MarkovGame

    @property
    def periphery(self) -> np.ndarray:
        return self.states[~self.interior]


@dataclass(eq=False)
class LocalSolution:
    superstate: tuple[int, int]
    states: np.ndarray
    values: np.ndarray
    pursuer_policy: np.ndarray
    evader_policy: np.ndarray
    stats: SolveStats | None = None

    def position(self, s) -> np.ndarray:
        s = np.asarray(s)
        pos = np.searchsorted(self.states, s)
        if np.any(pos >= self.states.size) or np.any(self.states[np.minimum(pos, self.states.size - 1)] != s):
            raise KeyError(f"joint state(s) {s} outside local game {self.superstate}")
        return pos

    def value(self, s) -> np.ndarray:
        return self.values[self.position(s)]

    def policy(self, role: AgentRole) -> np.ndarray:
        return self.pursuer_policy if role == AgentRole.PURSUER else self.evader_policy


def enumerate_terminal_superstates(env: PegEnv, partition: Partition,
                                   topology: SuperstateTopology | None = None) -> list[tuple[int, int]]:
    """Sorted joint superstates that contain at least one capture state."""
    M = partition.membership().astype(float)
    hits = M @ env.capture_matrix.astype(float) @ M.T
    k1, k2 = np.nonzero(hits > 0)
    return [(int(a), int(b)) for a, b in zip(k1, k2)]


def build_local_game(env: PegEnv, partition: Partition, topology: SuperstateTopology | None,
                     gamma: tuple[int, int]) -> LocalGame:
    n = env.n_cells
    g1, g2 = partition.members(gamma[0]), partition.members(gamma[1])
    inner = (g1[:, None] * n + g2[None, :]).ravel()
    if not env.terminal[inner].any():
        raise ValueError(f"joint superstate {gamma} contains no capture state")
    live = inner[~env.terminal[inner]]
    A1, A2 = env.n_actions(AgentRole.PURSUER), env.n_actions(AgentRole.EVADER)
    A = A1 * A2

    rows = joint_rows(env, live).tocoo()
    states = np.union1d(inner, rows.col)
    interior = np.isin(states, inner)

    def local(idx):
        return np.searchsorted(states, idx)

    terminal = ~np.isin(states, live)
    live_pos = local(live)
    dead_pos = np.flatnonzero(terminal)
    dead_rows = (dead_pos[:, None] * A + np.arange(A)).ravel()
    T = sp.csr_matrix(
        (
            np.concatenate([rows.data, np.ones(dead_rows.size)]),
            (
                np.concatenate([live_pos[rows.row // A] * A + rows.row % A, dead_rows]),
                np.concatenate([local(rows.col), dead_rows // A]),
            ),
        ),
        shape=(states.size * A, states.size),
    )
    T.sum_duplicates()
    reward_state = env.terminal[states].astype(float)
    game = MarkovGame(
        transitions=T,
        rewards=np.repeat(reward_state, A),
        n_actions1=np.full(states.size, A1),
        n_actions2=np.full(states.size, A2),
        terminal=terminal,
        terminal_values=reward_state / (1.0 - env.discount),
        discount=env.discount,
        labels=states,
    )
    return LocalGame(tuple(gamma), states, interior, game)


def solve_local_games(games, tol: float = 1e-6, max_iters: int = 10_000,
                      n_jobs: int = 1) -> tuple[dict, SolveStats]:
    """Solve every local game; returns ``({gamma: LocalSolution}, total_stats)``.

    The games are independent; with ``n_jobs > 1`` they are solved on a
    thread pool and merged in superstate order.
    """
    games = sorted(games, key=lambda g: g.superstate)

    def solve(lg: LocalGame) -> LocalSolution:
        V, p1, p2, stats = shapley_solve(lg.game, tol=tol, max_iters=max_iters)
        return LocalSolution(lg.superstate, lg.states, V, p1, p2, stats)

    if n_jobs > 1 and len(games) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            solutions = list(pool.map(solve, games))
    else:
        solutions = [solve(g) for g in games]

    total = SolveStats(final_residual=0.0)
    for sol in solutions:
        total.iterations = max(total.iterations, sol.stats.iterations)
        total.lp_count += sol.stats.lp_count
        total.lp_per_iteration = max(total.lp_per_iteration, sol.stats.lp_per_iteration)
        total.final_residual = max(total.final_residual, sol.stats.final_residual)
    return {sol.superstate: sol for sol in solutions}, total

