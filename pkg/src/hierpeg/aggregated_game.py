"""The superstate-level game whose actions are options.

Transitions are discounted first-exit probabilities averaged over the
joint boundary (the discount is folded into the kernel, so the Shapley
update carries no extra factor).  Superstates that hold a local game are
absorbing with the boundary-averaged local Nash value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .abstraction import Partition, SuperstateTopology, joint_boundary
from .flat_solver import ConvergenceError, MarkovGame, SolveStats, shapley_solve
from .gridworld import AgentRole, PegEnv
from .options import OptionDef, OptionSet

__all__ = [
    "AggregationError",
    "EmptyBoundaryError",
    "PhiTable",
    "AggregatedSolution",
    "compute_phi",
    "aggregated_transition_row",
    "aggregated_reward",
    "build_and_solve_aggregated",
]

logger = logging.getLogger(__name__)


class AggregationError(ValueError):
    pass


class EmptyBoundaryError(AggregationError):
    pass


@dataclass(eq=False)
class PhiTable:
    """``values[g, i, j]``: discounted probability of first leaving ``superstate``
    into ``targets[g]`` from joint state ``(domain1[i], domain2[j])``."""

    superstate: tuple[int, int]
    targets: list[tuple[int, int]]
    domain1: np.ndarray
    domain2: np.ndarray
    values: np.ndarray
    iterations: int = 0

    def at(self, s1: int, s2: int) -> dict[tuple[int, int], float]:
        i = int(np.searchsorted(self.domain1, s1))
        j = int(np.searchsorted(self.domain2, s2))
        if i >= self.domain1.size or self.domain1[i] != s1 or j >= self.domain2.size or self.domain2[j] != s2:
            raise KeyError(f"({s1}, {s2}) outside superstate {self.superstate}")
        return {t: float(self.values[g, i, j]) for g, t in enumerate(self.targets)}


def _option_kernel(env: PegEnv, option: OptionDef, columns: np.ndarray) -> np.ndarray:
    """Rows: domain cells; columns: positions in ``columns`` (domain + periphery)."""
    dest, prob = env.kernel(option.agent)
    out = np.zeros((option.domain.size, columns.size))
    rows = np.arange(option.domain.size)
    for slot in range(2):
        d = dest[option.domain, option.policy, slot]
        np.add.at(out, (rows, np.searchsorted(columns, d)), prob[option.domain, option.policy, slot])
    return out


def compute_phi(env: PegEnv, partition: Partition, topology: SuperstateTopology | None,
                gamma: tuple[int, int], o1: OptionDef, o2: OptionDef,
                tol: float = 1e-9, max_iters: int = 100_000) -> PhiTable:
    """Fixed-point iteration for the discounted first-exit probabilities.

    Starts from zero; each sweep applies one joint step under the two
    deterministic option policies, counting exits into each neighbouring
    joint superstate and recursing on states that stay inside.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    k1, k2 = gamma
    if o1.agent != AgentRole.PURSUER or o2.agent != AgentRole.EVADER:
        raise AggregationError("expected a pursuer option and an evader option")
    if o1.source != k1 or o2.source != k2:
        raise AggregationError(f"options {o1.name}, {o2.name} are not applicable at {gamma}")
    d1, d2 = o1.domain, o2.domain
    ext1 = np.union1d(d1, o1.terminal)
    ext2 = np.union1d(d2, o2.terminal)
    P1 = _option_kernel(env, o1, ext1)
    P2 = _option_kernel(env, o2, ext2)
    in1 = np.isin(ext1, d1)
    in2 = np.isin(ext2, d2)

    lab1 = partition.labels[ext1]
    lab2 = partition.labels[ext2]
    outside = ~np.outer(in1, in2)
    pair_codes = lab1[:, None] * partition.superstate_count + lab2[None, :]
    codes = np.unique(pair_codes[outside])
    targets = [divmod(int(c), partition.superstate_count) for c in codes]
    exits = np.stack([(pair_codes == c) & outside for c in codes]).astype(float) if codes.size else np.zeros((0,) + outside.shape)

    # capture states inside gamma are absorbing: they never exit
    live = ~env.capture_matrix[np.ix_(d1, d2)]
    beta = env.discount
    phi = np.zeros((len(targets), d1.size, d2.size))
    ix1 = np.flatnonzero(in1)
    ix2 = np.flatnonzero(in2)
    for it in range(1, max_iters + 1):
        X = exits.copy()
        X[:, ix1[:, None], ix2[None, :]] += phi
        new = beta * (P1 @ X @ P2.T) * live
        change = float(np.max(np.abs(new - phi))) if new.size else 0.0
        phi = new
        if change < tol:
            break
    else:
        raise ConvergenceError(f"phi iteration for {gamma} did not converge", residual=change, iterations=max_iters)

    used = phi.reshape(len(targets), -1).max(axis=1) > 0 if targets else np.zeros(0, dtype=bool)
    return PhiTable(
        superstate=tuple(gamma),
        targets=[t for t, u in zip(targets, used) if u],
        domain1=d1,
        domain2=d2,
        values=phi[used],
        iterations=it,
    )


def aggregated_transition_row(phi: PhiTable, boundary: np.ndarray, n_cells: int) -> dict[tuple[int, int], float]:
    """Average the φ rows over the joint boundary states (uniform entry distribution)."""
    boundary = np.asarray(boundary, dtype=np.int64)
    if boundary.size == 0:
        raise EmptyBoundaryError(f"superstate {phi.superstate} has an empty joint boundary")
    s1, s2 = np.divmod(boundary, n_cells)
    i = np.searchsorted(phi.domain1, s1)
    j = np.searchsorted(phi.domain2, s2)
    if np.any(phi.domain1[np.minimum(i, phi.domain1.size - 1)] != s1) or np.any(
        phi.domain2[np.minimum(j, phi.domain2.size - 1)] != s2
    ):
        raise AggregationError("boundary states must lie inside the superstate")
    mass = phi.values[:, i, j].mean(axis=1)
    return {t: float(m) for t, m in zip(phi.targets, mass)}


def aggregated_reward(gamma: tuple[int, int], local_solutions: dict, boundary: np.ndarray,
                      terminal_superstates=None) -> float:
    """Boundary-averaged local Nash value, or 0 when ``gamma`` has no local game."""
    gamma = tuple(gamma)
    sol = local_solutions.get(gamma)
    if sol is None:
        if terminal_superstates is not None and gamma in set(map(tuple, terminal_superstates)):
            raise AggregationError(f"missing local solution for {gamma}")
        return 0.0
    boundary = np.asarray(boundary, dtype=np.int64)
    if boundary.size == 0:
        raise EmptyBoundaryError(f"superstate {gamma} has an empty joint boundary")
    return float(np.mean(sol.value(boundary)))


@dataclass(eq=False)
class AggregatedSolution:
    """Values indexed by ``k1 * count + k2``; policies keyed by superstate and
    aligned with ``OptionSet.available`` order."""

    superstate_count: int
    values: np.ndarray
    terminal: np.ndarray
    rewards: np.ndarray
    pursuer_policy: dict
    evader_policy: dict
    transitions: dict = field(default_factory=dict)
    stats: SolveStats | None = None
    flags: list = field(default_factory=list)

    def value(self, gamma: tuple[int, int]) -> float:
        return float(self.values[gamma[0] * self.superstate_count + gamma[1]])


def build_and_solve_aggregated(env: PegEnv, partition: Partition, topology: SuperstateTopology,
                               options: OptionSet, local_solutions: dict, tol: float = 1e-6,
                               phi_tol: float = 1e-9, terminal_mode: str = "fixed",
                               max_iters: int = 10_000) -> AggregatedSolution:
    """Assemble the option-level game and solve it with Shapley iteration.

    ``terminal_mode="fixed"`` keeps a local-game superstate at its reward
    forever after; ``"recurring"`` instead lets that reward accrue every
    macro-step, giving ``reward / (1 - discount)``.
    """
    if terminal_mode not in ("fixed", "recurring"):
        raise ValueError(f"unknown terminal_mode {terminal_mode!r}")
    L = partition.superstate_count
    n = env.n_cells
    terminal_keys = set(local_solutions)
    G = L * L
    terminal = np.zeros(G, dtype=bool)
    rewards = np.zeros(G)
    flags = []
    for g in range(G):
        gamma = divmod(g, L)
        if gamma not in terminal_keys:
            continue
        terminal[g] = True
        bnd = joint_boundary(env, partition, gamma)
        if bnd.size == 0:
            # unreachable from outside; fall back to the mean over the superstate
            flags.append(("empty-boundary", gamma))
            sol = local_solutions[gamma]
            rewards[g] = float(np.mean(sol.values[np.isin(sol.states, _inner(partition, gamma, n))]))
        else:
            rewards[g] = aggregated_reward(gamma, local_solutions, bnd)

    n1 = np.ones(G, dtype=np.int64)
    n2 = np.ones(G, dtype=np.int64)
    menus = {}
    for g in np.flatnonzero(~terminal):
        gamma = divmod(int(g), L)
        m1 = options.available(AgentRole.PURSUER, gamma[0])
        m2 = options.available(AgentRole.EVADER, gamma[1])
        if not m1 or not m2:
            raise AggregationError(f"dead end: no options at {gamma} and no local game")
        menus[gamma] = (m1, m2)
        n1[g], n2[g] = len(m1), len(m2)

    offsets = np.concatenate([[0], np.cumsum(n1 * n2)])
    rows, cols, data = [], [], []
    table = {}
    for gamma, (m1, m2) in menus.items():
        g = gamma[0] * L + gamma[1]
        bnd = joint_boundary(env, partition, gamma)
        if bnd.size == 0:
            flags.append(("unreachable", gamma))
            continue
        for a, o1 in enumerate(m1):
            for b, o2 in enumerate(m2):
                phi = compute_phi(env, partition, topology, gamma, o1, o2, tol=phi_tol)
                row = aggregated_transition_row(phi, bnd, n)
                table[(gamma, a, b)] = row
                r = offsets[g] + a * n2[g] + b
                for (t1, t2), mass in row.items():
                    rows.append(r)
                    cols.append(t1 * L + t2)
                    data.append(mass)
    T = sp.csr_matrix((data, (rows, cols)), shape=(int(offsets[-1]), G))
    T.sum_duplicates()
    for kind, gamma in flags:
        logger.warning("aggregated game: %s superstate %s", kind, gamma)

    terminal_values = rewards / (1.0 - env.discount) if terminal_mode == "recurring" else rewards.copy()
    game = MarkovGame(
        transitions=T,
        rewards=np.zeros(T.shape[0]),
        n_actions1=n1,
        n_actions2=n2,
        terminal=terminal,
        terminal_values=terminal_values,
        discount=1.0,
    )
    V, p1, p2, stats = shapley_solve(game, tol=tol, max_iters=max_iters)
    pol1 = {gamma: p1[gamma[0] * L + gamma[1], :len(m1)].copy() for gamma, (m1, m2) in menus.items()}
    pol2 = {gamma: p2[gamma[0] * L + gamma[1], :len(m2)].copy() for gamma, (m1, m2) in menus.items()}
    return AggregatedSolution(
        superstate_count=L,
        values=V,
        terminal=terminal,
        rewards=rewards,
        pursuer_policy=pol1,
        evader_policy=pol2,
        transitions=table,
        stats=stats,
        flags=flags,
    )


def _inner(partition: Partition, gamma, n: int) -> np.ndarray:
    g1, g2 = partition.members(gamma[0]), partition.members(gamma[1])
    return (g1[:, None] * n + g2[None, :]).ravel()
