"""Zero-sum Markov games: Shapley value iteration, best responses, exploitability."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .gridworld import AgentRole, PegEnv
from .matrix_game import solve_matrix_games

__all__ = [
    "ConvergenceError",
    "MarkovGame",
    "SolveStats",
    "joint_rows",
    "build_peg_game",
    "shapley_solve",
    "best_response",
    "evaluate_policies",
    "exploitability",
]

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class MarkovGame:
    """Finite two-player zero-sum game in flattened form.

    Row ``offsets[s] + a1 * n_actions2[s] + a2`` of ``transitions`` and
    ``rewards`` describes the joint action ``(a1, a2)`` at state ``s``.
    Terminal states are absorbing and keep the fixed value
    ``terminal_values[s]``; their rows are never read by the solvers.
    Rows may be sub-stochastic, which is how a discount absorbed into the
    kernel is represented (``discount`` is then 1).
    """

    transitions: sp.csr_matrix
    rewards: np.ndarray
    n_actions1: np.ndarray
    n_actions2: np.ndarray
    terminal: np.ndarray
    terminal_values: np.ndarray
    discount: float
    labels: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.terminal)
        self.n_actions1 = np.asarray(self.n_actions1, dtype=np.int64)
        self.n_actions2 = np.asarray(self.n_actions2, dtype=np.int64)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        self.terminal_values = np.asarray(self.terminal_values, dtype=float)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.transitions = sp.csr_matrix(self.transitions)
        if self.n_actions1.shape != (n,) or self.n_actions2.shape != (n,):
            raise ValueError("action-count arrays must have one entry per state")
        if self.terminal_values.shape != (n,):
            raise ValueError("terminal_values must have one entry per state")
        if np.any(self.n_actions1[~self.terminal] < 1) or np.any(self.n_actions2[~self.terminal] < 1):
            raise ValueError("every non-terminal state needs at least one action per agent")
        n_rows = int(np.sum(self.n_actions1 * self.n_actions2))
        if self.transitions.shape != (n_rows, n):
            raise ValueError(f"transitions must have shape {(n_rows, n)}, got {self.transitions.shape}")
        if self.rewards.shape != (n_rows,):
            raise ValueError("rewards must have one entry per transition row")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")

    @property
    def n_states(self) -> int:
        return len(self.terminal)

    @cached_property
    def offsets(self) -> np.ndarray:
        sizes = self.n_actions1 * self.n_actions2
        return np.concatenate([[0], np.cumsum(sizes)])

    @cached_property
    def groups(self) -> list[tuple[np.ndarray, int, int, np.ndarray]]:
        """Non-terminal states grouped by action-set shape.

        Each entry is ``(states, k1, k2, rows)`` with ``rows`` of shape
        ``(len(states), k1 * k2)``.
        """
        live = np.flatnonzero(~self.terminal)
        shapes = np.stack([self.n_actions1[live], self.n_actions2[live]], axis=1)
        out = []
        for k1, k2 in sorted({tuple(x) for x in shapes.tolist()}):
            states = live[(shapes[:, 0] == k1) & (shapes[:, 1] == k2)]
            rows = self.offsets[states][:, None] + np.arange(k1 * k2)[None, :]
            out.append((states, k1, k2, rows))
        return out

    @property
    def max_actions(self) -> tuple[int, int]:
        return int(self.n_actions1.max()), int(self.n_actions2.max())

    def initial_values(self) -> np.ndarray:
        v = np.zeros(self.n_states)
        v[self.terminal] = self.terminal_values[self.terminal]
        return v

    def backup(self, values: np.ndarray) -> np.ndarray:
        """Per-row ``r + discount * sum_s' T(s'|row) V(s')``."""
        return self.rewards + self.discount * (self.transitions @ values)


@dataclass
class SolveStats:
    iterations: int = 0
    final_residual: float = float("inf")
    lp_count: int = 0
    lp_per_iteration: int = 0
    residuals: list = field(default_factory=list)


def joint_rows(env: PegEnv, sources: np.ndarray) -> sp.csr_matrix:
    """Product-kernel rows for the given joint source states.

    Returns a CSR matrix of shape ``(len(sources) * A1 * A2, n_joint)``;
    terminal sources are not special-cased here.
    """
    sources = np.asarray(sources, dtype=np.int64)
    n = env.n_cells
    d1, p1 = env.kernel(AgentRole.PURSUER)
    d2, p2 = env.kernel(AgentRole.EVADER)
    s1, s2 = np.divmod(sources, n)
    D1, P1 = d1[s1], p1[s1]
    D2, P2 = d2[s2], p2[s2]
    S, A1, A2 = len(sources), D1.shape[1], D2.shape[1]
    cols = D1[:, :, None, :, None] * n + D2[:, None, :, None, :]
    probs = P1[:, :, None, :, None] * P2[:, None, :, None, :]
    rows = np.broadcast_to(np.arange(S * A1 * A2).reshape(S, A1, A2, 1, 1), cols.shape)
    keep = probs > 0
    m = sp.coo_matrix(
        (probs[keep], (rows[keep], cols[keep])), shape=(S * A1 * A2, env.n_joint)
    ).tocsr()
    m.sum_duplicates()
    return m


def build_peg_game(env: PegEnv) -> MarkovGame:
    """The full game over all joint states, terminal states absorbing."""
    N = env.n_joint
    A1, A2 = env.n_actions(AgentRole.PURSUER), env.n_actions(AgentRole.EVADER)
    term = env.terminal
    T = joint_rows(env, np.arange(N)).tocoo()
    live = ~term[T.row // (A1 * A2)]
    term_rows = (np.flatnonzero(term)[:, None] * (A1 * A2) + np.arange(A1 * A2)).ravel()
    rows = np.concatenate([T.row[live], term_rows])
    cols = np.concatenate([T.col[live], term_rows // (A1 * A2)])
    data = np.concatenate([T.data[live], np.ones(term_rows.size)])
    T = sp.csr_matrix((data, (rows, cols)), shape=T.shape)
    T.sum_duplicates()
    rewards = np.repeat(term.astype(float), A1 * A2)
    return MarkovGame(
        transitions=T,
        rewards=rewards,
        n_actions1=np.full(N, A1),
        n_actions2=np.full(N, A2),
        terminal=term.copy(),
        terminal_values=term / (1.0 - env.discount),
        discount=env.discount,
        labels=np.arange(N),
    )


def _pad_policy(game: MarkovGame, which: int) -> np.ndarray:
    k = game.max_actions[which]
    pol = np.zeros((game.n_states, k))
    pol[:, 0] = 1.0
    return pol


def shapley_solve(game: MarkovGame, tol: float = 1e-6, max_iters: int = 10_000, callback=None):
    """Shapley value iteration from zero with terminal values fixed analytically.

    Returns ``(values, pursuer_policy, evader_policy, stats)``.  Policies are
    the per-state equilibrium strategies of the final stage games, padded
    with zeros to the largest action count; terminal states get the stay
    action.  Sweeps are synchronous.  ``callback(iteration, values)`` is
    called after every sweep.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    V = game.initial_values()
    p1 = _pad_policy(game, 0)
    p2 = _pad_policy(game, 1)
    stats = SolveStats(lp_per_iteration=int(np.count_nonzero(~game.terminal)))
    if stats.lp_per_iteration == 0:
        stats.final_residual = 0.0
        return V, p1, p2, stats

    for _ in range(max_iters):
        backed = game.backup(V)
        V_new = V.copy()
        for states, k1, k2, rows in game.groups:
            vals, rp, cp = solve_matrix_games(backed[rows].reshape(-1, k1, k2))
            V_new[states] = vals
            p1[states] = 0.0
            p2[states] = 0.0
            p1[states, :k1] = rp
            p2[states, :k2] = cp
        residual = float(np.max(np.abs(V_new - V)))
        stats.residuals.append(residual)
        stats.iterations += 1
        stats.lp_count += stats.lp_per_iteration
        V = V_new
        if callback is not None:
            callback(stats.iterations, V)
        if residual < tol:
            stats.final_residual = residual
            return V, p1, p2, stats
    stats.final_residual = stats.residuals[-1]
    raise ConvergenceError(
        f"Shapley iteration stopped after {max_iters} sweeps with residual {stats.final_residual:.3g}",
        residual=stats.final_residual,
        iterations=max_iters,
    )


def best_response(game: MarkovGame, opponent: np.ndarray, role: AgentRole,
                  tol: float = 1e-10, max_iters: int = 100_000):
    """Optimal values for ``role`` when the other agent plays ``opponent``.

    The opponent's mixed policy is folded into the kernel, leaving a
    single-agent MDP that is solved by value iteration.  Returns
    ``(values, greedy_actions)``.
    """
    opponent = np.asarray(opponent, dtype=float)
    if opponent.shape[0] != game.n_states:
        raise ValueError("opponent policy must cover every state")
    role = AgentRole(role)
    V = game.initial_values()
    greedy = np.zeros(game.n_states, dtype=np.int64)
    for it in range(max_iters):
        backed = game.backup(V)
        V_new = V.copy()
        for states, k1, k2, rows in game.groups:
            q = backed[rows].reshape(-1, k1, k2)
            if role == AgentRole.PURSUER:
                own = np.einsum("bij,bj->bi", q, opponent[states, :k2])
                greedy[states] = own.argmax(axis=1)
                V_new[states] = own.max(axis=1)
            else:
                own = np.einsum("bij,bi->bj", q, opponent[states, :k1])
                greedy[states] = own.argmin(axis=1)
                V_new[states] = own.min(axis=1)
        residual = float(np.max(np.abs(V_new - V))) if V.size else 0.0
        V = V_new
        if residual < tol:
            return V, greedy
    raise ConvergenceError(
        f"best-response iteration stopped after {max_iters} sweeps", residual=residual, iterations=max_iters
    )


def evaluate_policies(game: MarkovGame, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Exact values of a stationary policy pair by one sparse linear solve."""
    n = game.n_states
    weights = np.zeros(game.transitions.shape[0])
    row_state = np.zeros(game.transitions.shape[0], dtype=np.int64)
    for states, k1, k2, rows in game.groups:
        w = p1[states, :k1, None] * p2[states, None, :k2]
        weights[rows.ravel()] = w.reshape(len(states), -1).ravel()
        row_state[rows.ravel()] = np.repeat(states, k1 * k2)
    W = sp.csr_matrix((weights, (row_state, np.arange(len(weights)))), shape=(n, len(weights)))
    P = (W @ game.transitions).tocsr()
    r = W @ game.rewards
    live = np.flatnonzero(~game.terminal)
    dead = np.flatnonzero(game.terminal)
    V = game.initial_values()
    if live.size:
        P_ll = P[live][:, live]
        rhs = r[live] + game.discount * (P[live][:, dead] @ V[dead])
        A = sp.identity(live.size, format="csc") - game.discount * P_ll.tocsc()
        V[live] = spla.spsolve(A, rhs)
    return V


def exploitability(game: MarkovGame, p1: np.ndarray, p2: np.ndarray, tol: float = 1e-10) -> float:
    """Largest per-state gain available to either agent by deviating alone."""
    V = evaluate_policies(game, p1, p2)
    br1, _ = best_response(game, p2, AgentRole.PURSUER, tol=tol)
    br2, _ = best_response(game, p1, AgentRole.EVADER, tol=tol)
    return float(max(np.max(br1 - V), np.max(V - br2)))
