import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from hierpeg import AgentRole, ConvergenceError, MarkovGame, PegEnv, build_peg_game, parse_map, shapley_solve
from hierpeg.flat_solver import best_response, evaluate_policies, exploitability
from hierpeg.matrix_game import MatrixGameSolution, saddle_residuals

import oracles
from conftest import OPEN3


def one_state_game(q, discount=0.0):
    q = np.asarray(q, dtype=float)
    k1, k2 = q.shape
    return MarkovGame(
        transitions=sp.csr_matrix(np.ones((k1 * k2, 1))),
        rewards=q.ravel(),
        n_actions1=[k1],
        n_actions2=[k2],
        terminal=[False],
        terminal_values=[0.0],
        discount=discount,
    )


@pytest.mark.parametrize("text, slip", [(OPEN3, 0.0), (OPEN3, 0.3), ("....\n.#..\n....\n", 0.0)])
def test_matches_brute_force_oracle(text, slip):
    env = PegEnv(parse_map(text), slip=slip)
    V, *_ = shapley_solve(build_peg_game(env), tol=1e-10)
    ref = oracles.brute_force_shapley(text, radius=1, beta=0.95, slip=slip)
    np.testing.assert_allclose(V, ref, atol=1e-6)


def test_terminal_values_are_analytic(flat2, env2):
    assert np.all(flat2.values_[env2.terminal] == pytest.approx(20.0))


def test_game_without_reward_stays_at_zero():
    game = one_state_game([[0.0, 0.0], [0.0, 0.0]], discount=0.95)
    V, *_ = shapley_solve(game)
    assert V[0] == 0.0


def test_lp_count_identity(flat2, env2):
    st_ = flat2.stats_
    assert st_.lp_per_iteration == env2.n_joint - int(env2.terminal.sum())
    assert st_.lp_count == st_.lp_per_iteration * st_.iterations
    assert env2.n_joint == 4624


def test_contraction_and_monotone_sweeps(env2):
    iterates = []
    V, *_ = shapley_solve(build_peg_game(env2), callback=lambda k, v: iterates.append(v.copy()))
    prev_change = None
    for a, b in zip(iterates, iterates[1:]):
        assert np.all(b >= a - 1e-12)
        change = np.max(np.abs(b - a))
        if prev_change is not None:
            assert change <= env2.discount * prev_change + 1e-12
        prev_change = change
    assert V.min() >= 0 and V.max() <= 1 / (1 - env2.discount) + 1e-12


def test_policy_evaluation_reproduces_values(flat2):
    V = evaluate_policies(flat2.game_, flat2.pursuer_policy_, flat2.evader_policy_)
    np.testing.assert_allclose(V, flat2.values_, atol=10 * flat2.tol)


def test_best_response_to_nash_recovers_value(flat2):
    for role, opp in ((AgentRole.PURSUER, flat2.evader_policy_), (AgentRole.EVADER, flat2.pursuer_policy_)):
        br, _ = best_response(flat2.game_, opp, role)
        np.testing.assert_allclose(br, flat2.values_, atol=10 * flat2.tol)


def test_best_response_to_idle_evader_dominates():
    env = PegEnv(parse_map(OPEN3))
    game = build_peg_game(env)
    V, p1, p2, _ = shapley_solve(game, tol=1e-10)
    idle = np.zeros_like(p2)
    idle[:, 0] = 1.0
    br, _ = best_response(game, idle, AgentRole.PURSUER)
    assert np.all(br >= V - 1e-9)


def test_corrupted_policy_is_exploitable():
    env = PegEnv(parse_map("....\n....\n....\n"))
    game = build_peg_game(env)
    V, p1, p2, _ = shapley_solve(game, tol=1e-10)
    assert exploitability(game, p1, p2) <= 1e-6
    # pick a live state where the pursuer is not already indifferent
    live = np.flatnonzero(~env.terminal)
    bad = p1.copy()
    for s in live:
        a = int(np.argmin(p1[s]))
        bad[s] = 0.0
        bad[s, a] = 1.0
    assert exploitability(game, bad, p2) > 1e-3


def test_single_state_exploitability_is_saddle_residual():
    q = np.array([[3.0, -1.0], [0.0, 2.0]])
    game = one_state_game(q)
    p1 = np.array([[0.9, 0.1]])
    p2 = np.array([[0.2, 0.8]])
    v = float(p1[0] @ q @ p2[0])
    gaps = saddle_residuals(q, MatrixGameSolution(v, p1[0], p2[0]))
    assert exploitability(game, p1, p2) == pytest.approx(max(gaps), abs=1e-12)


def test_best_response_against_uniform_single_state():
    q = np.array([[1.0, 3.0], [2.0, -4.0], [0.0, 0.0]])
    uniform = np.full((1, 2), 0.5)
    br, greedy = best_response(one_state_game(q), uniform, AgentRole.PURSUER)
    assert br[0] == pytest.approx(q.mean(axis=1).max())
    assert greedy[0] == 0


def test_iteration_cap_raises():
    env = PegEnv(parse_map(OPEN3))
    with pytest.raises(ConvergenceError) as info:
        shapley_solve(build_peg_game(env), tol=1e-12, max_iters=1)
    assert info.value.iterations == 1 and info.value.residual > 0


def test_trivial_world_converges_within_contraction_bound():
    env = PegEnv(parse_map("."))
    tol = 1e-6
    _, _, _, stats = shapley_solve(build_peg_game(env), tol=tol)
    bound = int(np.ceil(np.log(tol * (1 - env.discount)) / np.log(env.discount)))
    assert stats.iterations <= bound


def test_terminal_rows_self_loop(env2):
    game = build_peg_game(env2)
    A = 45
    for s in np.flatnonzero(env2.terminal)[:25]:
        block = game.transitions[s * A:(s + 1) * A].toarray()
        assert np.all(block[:, s] == 1.0) and block.sum() == A


@settings(max_examples=10, deadline=None)
@given(rooms=st.integers(1, 2), size=st.integers(1, 3), slip=st.sampled_from([0.0, 0.2]),
       beta=st.sampled_from([0.5, 0.9]))
def test_rows_are_distributions(rooms, size, slip, beta):
    from hierpeg import room_grid_map
    env = PegEnv(parse_map(room_grid_map(rooms, size)), slip=slip, discount=beta)
    game = build_peg_game(env)
    assert np.allclose(np.asarray(game.transitions.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    V, p1, p2, _ = shapley_solve(game, tol=1e-9)
    assert V.min() >= 0 and V.max() <= 1 / (1 - beta) + 1e-9
    for p in (p1, p2):
        assert np.allclose(p.sum(axis=1), 1.0) and p.min() >= 0
