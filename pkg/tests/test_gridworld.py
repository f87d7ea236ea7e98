import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierpeg import EVADER_ACTIONS, PURSUER_ACTIONS, AgentRole, GridMap, MapError, PegEnv, parse_map, room_grid_map
from hierpeg.gridworld import individual_transition, is_capture, joint_transition

import oracles
from conftest import OPEN3, TWO_ROOMS


def test_parse_four_room_world_has_68_cells():
    grid = parse_map(room_grid_map(2, 4))
    assert (grid.width, grid.height) == (11, 11)
    assert grid.n_free == 68


def test_parse_single_cell():
    grid = parse_map(".")
    assert grid.n_free == 1 and not grid.walls


def test_parse_ring_around_center_wall():
    grid = parse_map("...\n.#.\n...\n")
    assert grid.n_free == 8


@pytest.mark.parametrize("text, msg", [
    ("..\n...\n", "ragged"),
    (".x.\n", "illegal"),
    ("##\n##\n", "no free"),
    (".#.\n", "connected"),
    ("", "empty"),
])
def test_parse_rejects_bad_maps(text, msg):
    with pytest.raises(MapError, match=msg):
        parse_map(text)


def test_gridmap_rejects_wall_outside():
    with pytest.raises(MapError):
        GridMap(2, 2, {(5, 5)})


def test_free_cells_are_row_major():
    grid = parse_map(".#\n..\n")
    assert grid.free_cells == ((0, 0), (1, 0), (1, 1))


def test_map_text_round_trip():
    text = room_grid_map(3, 2)
    assert parse_map(text).to_text() == text


def test_action_sets():
    assert len(PURSUER_ACTIONS) == 9 and len(EVADER_ACTIONS) == 5
    assert PURSUER_ACTIONS.labels() == ["stay", "N1", "S1", "E1", "W1", "N2", "S2", "E2", "W2"]
    assert PURSUER_ACTIONS.moves[:5] == EVADER_ACTIONS.moves


def test_deterministic_and_wall_moves():
    env = PegEnv(parse_map(OPEN3))
    center = env.map.index[(1, 1)]
    north = env.map.index[(0, 1)]
    assert individual_transition(env, AgentRole.EVADER, center, 1) == {north: 1.0}
    assert individual_transition(env, AgentRole.EVADER, north, 1) == {north: 1.0}


def test_slip_splits_mass():
    env = PegEnv(parse_map(OPEN3), slip=0.2)
    center = env.map.index[(1, 1)]
    dist = individual_transition(env, AgentRole.EVADER, center, 1)
    assert dist == pytest.approx({env.map.index[(0, 1)]: 0.8, center: 0.2})


def test_double_move_needs_clear_path():
    env = PegEnv(parse_map("...\n.#.\n...\n"))
    bottom = env.map.index[(2, 1)]
    # N2 from the bottom middle would pass the centre wall
    assert individual_transition(env, AgentRole.PURSUER, bottom, 5) == {bottom: 1.0}
    left = env.map.index[(0, 0)]
    assert individual_transition(env, AgentRole.PURSUER, left, 7) == {env.map.index[(0, 2)]: 1.0}


def test_joint_transition_examples():
    env = PegEnv(parse_map(room_grid_map(1, 5)), slip=0.5)
    a, b = env.map.index[(1, 1)], env.map.index[(5, 5)]
    out = joint_transition(env, (a, b), 3, 1)
    assert len(out) == 4 and all(p == pytest.approx(0.25) for p in out.values())
    cap = (a, a)
    assert joint_transition(env, cap, 5, 2) == {cap: 1.0}


def test_capture_is_closed_chebyshev_ball():
    env = PegEnv(parse_map(room_grid_map(1, 5)))
    i = env.map.index
    assert is_capture(env, (i[(1, 1)], i[(1, 1)]))
    assert is_capture(env, (i[(1, 1)], i[(2, 2)]))
    assert not is_capture(env, (i[(1, 1)], i[(3, 1)]))
    rewards = np.array([env.reward(s) for s in range(env.n_joint)])
    assert set(np.unique(rewards)) == {0.0, 1.0}
    assert np.array_equal(rewards > 0, env.terminal)


@pytest.mark.parametrize("slip", [0.0, 0.3])
@pytest.mark.parametrize("role, moves", [(AgentRole.PURSUER, oracles.PURSUER_MOVES),
                                         (AgentRole.EVADER, oracles.EVADER_MOVES)])
def test_kernel_matches_coordinate_oracle(slip, role, moves):
    env = PegEnv(parse_map(TWO_ROOMS), slip=slip)
    ref = oracles.move_dist(TWO_ROOMS, moves, slip)
    for s in range(env.n_cells):
        for a in range(len(moves)):
            got = individual_transition(env, role, s, a)
            assert got == pytest.approx(ref[s][a], abs=1e-15)
            assert sum(got.values()) == pytest.approx(1.0, abs=1e-12)


small_maps = st.integers(1, 3).flatmap(
    lambda rooms: st.tuples(st.just(rooms), st.integers(1, 3))
).map(lambda t: room_grid_map(*t))


@settings(max_examples=15, deadline=None)
@given(text=small_maps, slip=st.sampled_from([0.0, 0.25]), radius=st.integers(0, 2))
def test_joint_kernel_factorizes(text, slip, radius):
    env = PegEnv(parse_map(text), slip=slip, capture_radius=radius)
    rng = np.random.default_rng(0)
    n = env.n_cells
    for _ in range(20):
        s = (int(rng.integers(n)), int(rng.integers(n)))
        a1, a2 = int(rng.integers(9)), int(rng.integers(5))
        joint = joint_transition(env, s, a1, a2)
        assert sum(joint.values()) == pytest.approx(1.0, abs=1e-12)
        if is_capture(env, s):
            assert joint == {s: 1.0}
            continue
        m1 = individual_transition(env, AgentRole.PURSUER, s[0], a1)
        m2 = individual_transition(env, AgentRole.EVADER, s[1], a2)
        for (x, y), p in joint.items():
            assert p == pytest.approx(m1[x] * m2[y], abs=1e-15)


def test_transition_matrices_are_stochastic(env2):
    for role in AgentRole:
        for T in env2.transition_matrices(role):
            assert np.allclose(np.asarray(T.sum(axis=1)).ravel(), 1.0, atol=1e-12)


def test_joint_index_round_trip(env2):
    j = env2.joint_index(5, 17)
    assert env2.split_index(j) == (5, 17)
