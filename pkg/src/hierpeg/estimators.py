"""Estimator front ends: ``FlatNashSolver`` and ``HierarchicalSolver``.

Both follow the scikit-learn conventions: hyper-parameters go to
``__init__`` and are exposed through ``get_params``/``set_params``;
``fit(env)`` learns attributes with a trailing underscore.
"""

from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_env, check_partition, check_positive_int, check_tol
from .abstraction import compute_topology
from .aggregated_game import build_and_solve_aggregated
from .flat_solver import build_peg_game, shapley_solve
from .gridworld import AgentRole
from .local_games import build_local_game, enumerate_terminal_superstates, solve_local_games
from .options import build_all_options
from .simulator import FlatController, HierarchicalController, HierPolicy

__all__ = ["FlatNashSolver", "HierarchicalSolver"]


class FlatNashSolver(BaseEstimator):
    """Nash values and policies of the full joint-state game.

    Parameters
    ----------
    tol : float, default=1e-6
        Sup-norm change between sweeps at which iteration stops.
    max_iter : int, default=10000

    Attributes
    ----------
    game_ : MarkovGame
    values_ : ndarray of shape (n_joint,)
    pursuer_policy_, evader_policy_ : ndarray of shape (n_joint, n_actions)
    stats_ : SolveStats
    """

    def __init__(self, tol=1e-6, max_iter=10_000):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, env, y=None):
        env = check_env(env)
        tol = check_tol(self.tol)
        max_iter = check_positive_int(self.max_iter, "max_iter")
        t0 = time.perf_counter()
        self.game_ = build_peg_game(env)
        self.values_, self.pursuer_policy_, self.evader_policy_, self.stats_ = shapley_solve(
            self.game_, tol=tol, max_iters=max_iter
        )
        self.env_ = env
        self.fit_seconds_ = time.perf_counter() - t0
        return self

    def predict(self, states):
        """Nash values at joint state indices."""
        check_is_fitted(self, "values_")
        return self.values_[np.asarray(states, dtype=np.int64)]

    def predict_proba(self, states, role=AgentRole.PURSUER):
        check_is_fitted(self, "values_")
        policy = self.pursuer_policy_ if AgentRole(role) == AgentRole.PURSUER else self.evader_policy_
        return policy[np.asarray(states, dtype=np.int64)]

    def controller(self, role):
        check_is_fitted(self, "values_")
        policy = self.pursuer_policy_ if AgentRole(role) == AgentRole.PURSUER else self.evader_policy_
        return FlatController(policy, role, self.env_.n_cells)


class HierarchicalSolver(BaseEstimator):
    """Two-resolution decomposition: options, local games, aggregated game.

    Parameters
    ----------
    tol : float, default=1e-6
        Shapley tolerance for the local games and the aggregated game.
    phi_tol : float, default=1e-9
        Tolerance of the first-exit fixed point.
    option_tol : float, default=1e-10
        Value-iteration tolerance for the option MDPs.
    terminal_mode : {"fixed", "recurring"}, default="fixed"
        How local-game superstates behave in the aggregated game.
    n_jobs : int, default=1
        Threads used for the independent local games.

    Attributes
    ----------
    topology_, options_, local_solutions_, aggregated_, policy_
    phase_stats_ : dict
        Per-phase ``lp_count``, ``lp_per_iteration`` and ``seconds`` for
        ``"option"``, ``"local_game"`` and ``"abstract_game"``.
    """

    def __init__(self, tol=1e-6, phi_tol=1e-9, option_tol=1e-10, terminal_mode="fixed",
                 max_iter=10_000, n_jobs=1):
        self.tol = tol
        self.phi_tol = phi_tol
        self.option_tol = option_tol
        self.terminal_mode = terminal_mode
        self.max_iter = max_iter
        self.n_jobs = n_jobs

    def fit(self, env, partition):
        env = check_env(env)
        partition = check_partition(env, partition)
        tol = check_tol(self.tol)
        phi_tol = check_tol(self.phi_tol, "phi_tol")
        option_tol = check_tol(self.option_tol, "option_tol")
        max_iter = check_positive_int(self.max_iter, "max_iter")
        n_jobs = check_positive_int(self.n_jobs, "n_jobs")
        if self.terminal_mode not in ("fixed", "recurring"):
            raise ValueError(f"terminal_mode must be 'fixed' or 'recurring', got {self.terminal_mode!r}")

        phases = {}
        t0 = time.perf_counter()
        self.topology_ = compute_topology(env, partition)
        self.options_ = build_all_options(env, partition, self.topology_, tol=option_tol)
        phases["option"] = {"lp_count": 0, "lp_per_iteration": 0, "iterations": 0,
                            "count": len(self.options_), "seconds": time.perf_counter() - t0}

        t0 = time.perf_counter()
        keys = enumerate_terminal_superstates(env, partition, self.topology_)
        games = [build_local_game(env, partition, self.topology_, g) for g in keys]
        self.local_solutions_, local_stats = solve_local_games(games, tol=tol, max_iters=max_iter, n_jobs=n_jobs)
        phases["local_game"] = {"lp_count": local_stats.lp_count,
                                "lp_per_iteration": local_stats.lp_per_iteration,
                                "iterations": local_stats.iterations, "count": len(games),
                                "seconds": time.perf_counter() - t0}

        t0 = time.perf_counter()
        self.aggregated_ = build_and_solve_aggregated(
            env, partition, self.topology_, self.options_, self.local_solutions_,
            tol=tol, phi_tol=phi_tol, terminal_mode=self.terminal_mode, max_iters=max_iter,
        )
        agg = self.aggregated_.stats
        phases["abstract_game"] = {"lp_count": agg.lp_count, "lp_per_iteration": agg.lp_per_iteration,
                                   "iterations": agg.iterations,
                                   "count": int(np.count_nonzero(~self.aggregated_.terminal)),
                                   "seconds": time.perf_counter() - t0}
        self.phase_stats_ = phases
        self.partition_ = partition
        self.env_ = env
        self.policy_ = HierPolicy(partition, self.options_, self.local_solutions_, self.aggregated_)
        self.policy_.check_coverage()
        return self

    @property
    def lp_per_iteration_(self) -> int:
        """Largest local game plus the aggregated game, per sweep."""
        check_is_fitted(self, "phase_stats_")
        return (self.phase_stats_["local_game"]["lp_per_iteration"]
                + self.phase_stats_["abstract_game"]["lp_per_iteration"])

    def controller(self, role):
        check_is_fitted(self, "policy_")
        return HierarchicalController(self.policy_, role, self.env_.n_cells)
