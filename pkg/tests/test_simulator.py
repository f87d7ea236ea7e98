import numpy as np
import pytest

from hierpeg import AgentRole, PegEnv, parse_map, run_episode, run_matchups
from hierpeg.simulator import (
    FlatController,
    HierarchicalController,
    PolicyError,
    read_trajectory,
    write_trajectory,
)

import oracles
from conftest import OPEN3


@pytest.fixture(scope="module")
def controllers(flat2, hier2):
    return {
        "nash": (flat2.controller(AgentRole.PURSUER), flat2.controller(AgentRole.EVADER)),
        "hier": (hier2.controller(AgentRole.PURSUER), hier2.controller(AgentRole.EVADER)),
    }


def test_same_seed_same_episode(env2, controllers):
    p, e = controllers["hier"][0], controllers["nash"][1]
    a = run_episode(env2, p, e, seed=42, record=True)
    b = run_episode(env2, p, e, seed=42, record=True)
    assert a.trajectory == b.trajectory and a.steps == b.steps


def test_start_follows_documented_draw_order(env2, controllers):
    for seed in range(20):
        res = run_episode(env2, *controllers["nash"], seed=seed, record=True)
        rng = np.random.default_rng(seed)
        while True:
            s1, s2 = int(rng.integers(env2.n_cells)), int(rng.integers(env2.n_cells))
            if not env2.capture_matrix[s1, s2]:
                break
        assert res.trajectory[0][1:3] == (s1, s2)


def test_pairings_share_starts(env2, controllers):
    rep = run_matchups(env2, controllers, [("nash", "nash"), ("hier", "hier")], 15, base_seed=7, record=True)
    a = rep.episodes[("nash", "nash")]
    b = rep.episodes[("hier", "hier")]
    assert [r.trajectory[0][1:3] for r in a] == [r.trajectory[0][1:3] for r in b]
    assert [r.seed for r in a] == list(range(7, 22))


def test_trajectory_moves_follow_the_kernel(env2, controllers):
    text = env2.map.to_text()
    t1 = oracles.move_dist(text, oracles.PURSUER_MOVES, env2.slip)
    t2 = oracles.move_dist(text, oracles.EVADER_MOVES, env2.slip)
    cells = oracles.free_cells(text)
    res = run_episode(env2, controllers["hier"][0], controllers["hier"][1], seed=3, record=True)
    rows = res.trajectory
    for (k, a1, b1, x, y, *_), (_, a2, b2, *__) in zip(rows, rows[1:]):
        assert not oracles.capture(cells, a1, b1, env2.capture_radius)
        assert a2 in t1[a1][x] and b2 in t2[b1][y]
    assert rows[-1][5] == ("captured" if res.captured else "step-cap")
    if res.captured:
        assert oracles.capture(cells, rows[-1][1], rows[-1][2], env2.capture_radius)


def test_modes_agree_with_superstate_kind(env2, controllers, hier2):
    local = set(hier2.local_solutions_)
    rep = run_matchups(env2, controllers, [("hier", "hier")], 40, record=True)
    for res in rep.episodes[("hier", "hier")]:
        for step, s1, s2, a1, a2, m1, m2, g1, g2 in res.trajectory[:-1]:
            in_local = (g1, g2) in local
            assert m1.startswith("local") == in_local
            assert m2.startswith("local") == in_local
            if m1.startswith("option"):
                assert m1.split(":")[1].split("->")[0] == str(g1)


def test_option_persists_until_superstate_changes(env2, controllers):
    rep = run_matchups(env2, controllers, [("hier", "hier")], 60, record=True)
    seen = 0
    for res in rep.episodes[("hier", "hier")]:
        rows = res.trajectory[:-1]
        for prev, cur in zip(rows, rows[1:]):
            same = prev[7:9] == cur[7:9]
            if same and prev[5].startswith("option") and cur[5].startswith("option"):
                assert prev[5] == cur[5] and prev[6] == cur[6]
                seen += 1
    assert seen > 0


def test_trajectory_csv_round_trip(env2, controllers):
    res = run_episode(env2, controllers["hier"][0], controllers["nash"][1], seed=11, record=True)
    text = write_trajectory(res)
    assert read_trajectory(text) == res.trajectory
    with pytest.raises(ValueError):
        read_trajectory("a,b\n1,2\n")


def test_step_cap_censors_episode():
    env = PegEnv(parse_map(OPEN3), capture_radius=0)
    idle = np.zeros((env.n_joint, 9))
    idle[:, 0] = 1.0
    idle_e = np.zeros((env.n_joint, 5))
    idle_e[:, 0] = 1.0
    p = FlatController(idle, AgentRole.PURSUER, env.n_cells)
    e = FlatController(idle_e, AgentRole.EVADER, env.n_cells)
    rep = run_matchups(env, {"idle": (p, e)}, [("idle", "idle")], 5, step_cap=10)
    row = rep.row("idle", "idle")
    assert row["captured"] == 0 and row["capture_rate"] == 0.0 and np.isnan(row["mean_steps"])
    res = run_episode(env, p, e, seed=0, step_cap=10)
    assert res.steps == 10 and not res.captured


def test_invalid_arguments(env2, controllers):
    with pytest.raises(ValueError):
        run_episode(env2, *controllers["nash"], seed=0, step_cap=0)
    with pytest.raises(ValueError):
        run_matchups(env2, controllers, [("nash", "nash")], 0)
    everywhere = PegEnv(parse_map(".."), capture_radius=1)
    with pytest.raises(ValueError, match="capture"):
        run_episode(everywhere, *controllers["nash"], seed=0)


def test_missing_coverage_raises(hier2, env2):
    from hierpeg.simulator import HierPolicy
    pol = hier2.policy_
    broken = HierPolicy(pol.partition, pol.options, {}, pol.aggregated)
    with pytest.raises(PolicyError):
        broken.check_coverage()
    ctrl = HierarchicalController(broken, AgentRole.PURSUER, env2.n_cells)
    with pytest.raises(PolicyError):
        ctrl.act(0, 1, 0.5)


def test_report_csv(env2, controllers):
    rep = run_matchups(env2, controllers, [("nash", "hier")], 10)
    lines = rep.to_csv().splitlines()
    assert lines[0].split(",") == rep.FIELDS and len(lines) == 2
    with pytest.raises(KeyError):
        rep.row("hier", "nash")


def test_directional_dominance(env2, controllers):
    rep = run_matchups(env2, controllers, [("nash", "nash"), ("hier", "nash"), ("nash", "hier")], 400)
    nn = rep.row("nash", "nash")
    hn = rep.row("hier", "nash")
    nh = rep.row("nash", "hier")
    for r in (nn, hn, nh):
        assert r["capture_rate"] == 1.0
    # a hierarchical pursuer is slower than Nash, a hierarchical evader is caught sooner
    assert hn["mean_steps"] > nn["mean_steps"] > nh["mean_steps"]
