import math

import numpy as np
import pytest

from conftest import stub_env
from isac_stackelberg.ddqn import greedy_rollout
from isac_stackelberg.leader_env import LeaderEnv
from isac_stackelberg.orchestrator import (CNR_COLUMNS, LAMBDA_COLUMNS, HorizonTooLarge, brute_force_leader,
                                           run_baseline, run_stackelberg, sweep_cnr, sweep_lambda, table_csv)


def _discounted(env, seq, gamma):
    s, G = env.reset(), 0.0
    for k, a in enumerate(seq):
        o = env.step(s, a)
        G += gamma ** k * o.reward
        if o.done:
            break
        s = o.next
    return G


# ---------------------------------------------------------------- oracle

def test_horizon_one_is_argmax(desk, desk_cache):
    env = LeaderEnv(desk, cache=desk_cache)
    seq, v = brute_force_leader(env, 1, 0.99)
    rewards = [env.step(env.reset(), a).reward for a in range(18)]
    assert seq == (int(np.argmax(rewards)),) and v == max(rewards)


def test_oracle_picks_direct_move_to_goal(desk):
    cfg = desk.replace(**{"reward.eta1": 0.0, "reward.eta2": 0.0, "reward.p_fail": 0.0,
                          "mission.q_i": (50.0, -50.0, 60.0)})
    env = stub_env(cfg)
    seq, v = brute_force_leader(env, 3, 0.9)
    direct = [a for a in range(18) if env.step(env.reset(), a).done_reason == "goal"]
    # +x and -y at half speed both land inside the goal sphere; ties go to the lower id
    assert direct == [7, 16]
    assert seq == (7,) and v == 100.0


@pytest.fixture(scope="module")
def oracle5(desk, desk_cache):
    env = LeaderEnv(desk, cache=desk_cache)
    return env, brute_force_leader(env, 5, desk.agent.gamma)


def test_oracle_beats_random_rollouts(desk, oracle5):
    env, (seq, v) = oracle5
    g = desk.agent.gamma
    assert _discounted(env, seq, g) == pytest.approx(v, rel=1e-12)
    rng = np.random.default_rng(5)
    for _ in range(1000):
        assert _discounted(env, rng.integers(0, 18, 5), g) <= v + 1e-9


def test_horizon_too_large(desk, desk_cache):
    with pytest.raises(HorizonTooLarge):
        brute_force_leader(LeaderEnv(desk, cache=desk_cache), 6, 0.99)
    with pytest.raises(HorizonTooLarge):
        brute_force_leader(LeaderEnv(desk, cache=desk_cache), 0, 0.99)


# ---------------------------------------------------------------- runs

@pytest.fixture(scope="module")
def short_run(desk, desk_cache):
    return run_stackelberg(desk, cache=desk_cache, episodes=30)


def test_stackelberg_run(desk, short_run, oracle5):
    r = short_run
    assert len(r.stats) == 30 and len(r.env.cache) == 50
    assert r.manifest.scheme == "proposed" and r.manifest.u1_max == max(x.u1 for _, x in r.env.cache.items())
    _, G = greedy_rollout(r.params, r.env, desk.agent.gamma, max_steps=5)
    assert G <= oracle5[1][1] + 1e-9


def test_run_writes_layout(short_run, tmp_path):
    out = short_run.write(tmp_path / "run")
    assert sorted(p.name for p in out.iterdir()) == \
        ["follower_cells.csv", "manifest.json", "stats.csv", "trajectory.csv"]
    assert len((out / "follower_cells.csv").read_text().splitlines()) == 51


def test_rerun_is_identical(desk, desk_cache, short_run):
    again = run_stackelberg(desk, cache=desk_cache, episodes=30)
    assert [s.row() for s in again.stats] == [s.row() for s in short_run.stats]
    assert again.greedy_return == short_run.greedy_return


def test_baseline_uses_one_response(desk, desk_cache):
    r = run_baseline(desk, cache=desk_cache, episodes=5)
    assert len(r.env.cache) == 1
    assert r.env.cache.misses == 1 and r.env.cache.hits > 0
    assert r.manifest.u1_max == pytest.approx(max(x.u1 for _, x in desk_cache.items()))
    assert len({o.u1 for _, _, o in r.trajectory}) == 1


def test_lambda_zero_ignores_u1(desk, desk_cache):
    cfg = desk.replace(**{"game.lam": 0.0})
    prop = LeaderEnv(cfg, cache=desk_cache)
    base = run_baseline(cfg, cache=desk_cache, episodes=1).env
    s = prop.reset()
    for a in range(18):
        assert prop.step(s, a).reward == base.step(s, a).reward


def test_sweep_lambda_schema(desk, desk_cache):
    rows = sweep_lambda(desk, [0.0, 0.5, 1.0], [0], cache=desk_cache, episodes=2)
    assert [r["lam"] for r in rows] == [0.0, 0.5, 1.0]
    lines = table_csv(rows, LAMBDA_COLUMNS).splitlines()
    assert lines[0].split(",") == list(LAMBDA_COLUMNS) and len(lines) == 4


# ---------------------------------------------------------------- CNR sweep

def test_cnr_sweep_without_clutter(desk):
    rows = sweep_cnr(desk, [-math.inf])
    assert [r["scheme"] for r in rows] == ["AN", "noAN"]
    an, na = rows
    assert an["npc"] <= na["npc"] * (1 + 1e-6)
    assert na["rsp"] == 0.0 and an["an_ratio"] == pytest.approx(an["npc"] / na["npc"])
    assert table_csv(rows, CNR_COLUMNS).splitlines()[0].split(",") == list(CNR_COLUMNS)
