import numpy as np
import pytest

from hierpeg import AgentRole, ConvergenceError, compute_topology
from hierpeg.abstraction import joint_boundary
from hierpeg.aggregated_game import (
    AggregationError,
    EmptyBoundaryError,
    aggregated_reward,
    aggregated_transition_row,
    build_and_solve_aggregated,
    compute_phi,
)
from hierpeg.options import OptionSet, build_all_options

import oracles
from conftest import TWO_ROOMS, two_room_env, two_room_partition


def crossing_options(slip):
    # radius 0 keeps the split superstate (0, 1) free of captures
    env = two_room_env(slip=slip, radius=0)
    part = two_room_partition(env)
    topo = compute_topology(env, part)
    opts = build_all_options(env, part, topo)
    (o1,) = opts.available(AgentRole.PURSUER, 0)
    (o2,) = opts.available(AgentRole.EVADER, 1)
    return env, part, topo, o1, o2


@pytest.mark.parametrize("slip", [0.0, 0.5])
def test_phi_matches_matrix_power_oracle(slip):
    env, part, topo, o1, o2 = crossing_options(slip)
    phi = compute_phi(env, part, topo, (0, 1), o1, o2, tol=1e-13)
    pol1 = {int(s): int(a) for s, a in zip(o1.domain, o1.policy)}
    pol2 = {int(s): int(a) for s, a in zip(o2.domain, o2.policy)}
    ref = oracles.phi_matrix_power(TWO_ROOMS, part.labels.tolist(), (0, 1), pol1, pol2,
                                   radius=0, beta=env.discount, slip=slip, horizon=700)
    for (s1, s2), row in ref.items():
        got = phi.at(s1, s2)
        for tgt in set(row) | set(got):
            assert got.get(tgt, 0.0) == pytest.approx(row.get(tgt, 0.0), abs=1e-9)


@pytest.mark.parametrize("slip", [0.0, 0.5])
def test_phi_row_mass_below_discount(slip):
    env, part, topo, o1, o2 = crossing_options(slip)
    phi = compute_phi(env, part, topo, (0, 1), o1, o2)
    assert phi.values.min() >= 0
    assert phi.values.sum(axis=0).max() <= env.discount + 1e-9


def test_phi_grows_with_more_sweeps():
    env, part, topo, o1, o2 = crossing_options(0.5)
    coarse = compute_phi(env, part, topo, (0, 1), o1, o2, tol=1e-2)
    fine = compute_phi(env, part, topo, (0, 1), o1, o2, tol=1e-12)
    assert coarse.iterations < fine.iterations
    assert coarse.targets == fine.targets
    assert np.all(coarse.values <= fine.values + 1e-15)


def test_phi_iteration_cap():
    env, part, topo, o1, o2 = crossing_options(0.5)
    with pytest.raises(ConvergenceError):
        compute_phi(env, part, topo, (0, 1), o1, o2, tol=1e-12, max_iters=2)


def test_phi_rejects_mismatched_options():
    env, part, topo, o1, o2 = crossing_options(0.0)
    with pytest.raises(AggregationError):
        compute_phi(env, part, topo, (0, 1), o2, o1)
    with pytest.raises(AggregationError, match="not applicable"):
        compute_phi(env, part, topo, (1, 1), o1, o2)


def test_phi_lookup_outside_superstate():
    env, part, topo, o1, o2 = crossing_options(0.0)
    phi = compute_phi(env, part, topo, (0, 1), o1, o2)
    with pytest.raises(KeyError):
        phi.at(int(o2.domain[0]), int(o2.domain[0]))


def test_transition_row_averages_boundary():
    env, part, topo, o1, o2 = crossing_options(0.0)
    phi = compute_phi(env, part, topo, (0, 1), o1, o2)
    bnd = joint_boundary(env, part, (0, 1))
    row = aggregated_transition_row(phi, bnd, env.n_cells)
    n = env.n_cells
    manual = {}
    for s in bnd:
        for t, v in phi.at(*divmod(int(s), n)).items():
            manual[t] = manual.get(t, 0.0) + v / bnd.size
    assert row == pytest.approx(manual)
    with pytest.raises(EmptyBoundaryError):
        aggregated_transition_row(phi, np.array([], dtype=int), n)


def test_reward_is_boundary_mean(hier2, env2, part2):
    sols = hier2.local_solutions_
    for gamma, sol in sols.items():
        bnd = joint_boundary(env2, part2, gamma)
        assert aggregated_reward(gamma, sols, bnd) == pytest.approx(float(np.mean(sol.value(bnd))))
        with pytest.raises(EmptyBoundaryError):
            aggregated_reward(gamma, sols, np.array([], dtype=int))
    assert aggregated_reward((9, 9), sols, np.array([0])) == 0.0
    with pytest.raises(AggregationError, match="missing"):
        aggregated_reward((9, 9), sols, np.array([0]), terminal_superstates=[(9, 9)])


def test_aggregated_solution_structure(hier2, env2):
    agg = hier2.aggregated_
    top = agg.rewards[agg.terminal].max()
    assert np.allclose(agg.values[agg.terminal], agg.rewards[agg.terminal])
    assert agg.values.min() >= 0 and agg.values.max() <= top + 1e-9
    # diagonal rooms of the four-room world are the only capture-free pairs
    L = agg.superstate_count
    free = sorted(divmod(int(g), L) for g in np.flatnonzero(~agg.terminal))
    assert free == [(0, 3), (1, 2), (2, 1), (3, 0)]
    for (gamma, a, b), row in agg.transitions.items():
        assert sum(row.values()) <= env2.discount + 1e-9
        assert gamma not in row
    for gamma, p in {**agg.pursuer_policy, **agg.evader_policy}.items():
        assert p.sum() == pytest.approx(1.0)


def test_recurring_mode_scales_terminal_values(env2, part2, hier2):
    topo = hier2.topology_
    fixed = hier2.aggregated_
    rec = build_and_solve_aggregated(env2, part2, topo, hier2.options_, hier2.local_solutions_,
                                     terminal_mode="recurring")
    scale = 1 / (1 - env2.discount)
    assert np.allclose(rec.values[rec.terminal], fixed.rewards[fixed.terminal] * scale)
    assert np.all(rec.values >= fixed.values - 1e-9)


def test_bad_terminal_mode(env2, part2, hier2):
    with pytest.raises(ValueError, match="terminal_mode"):
        build_and_solve_aggregated(env2, part2, hier2.topology_, hier2.options_, hier2.local_solutions_,
                                   terminal_mode="sometimes")


def test_dead_end_is_reported(env2, part2, hier2):
    # without any pursuer options a capture-free superstate has no way out
    only_evader = OptionSet([o for o in hier2.options_ if o.agent == AgentRole.EVADER])
    with pytest.raises(AggregationError, match="dead end"):
        build_and_solve_aggregated(env2, part2, hier2.topology_, only_evader, hier2.local_solutions_)
