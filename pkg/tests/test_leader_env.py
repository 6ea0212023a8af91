import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import stub_env
from isac_stackelberg.kinematics import flight_power, in_goal_region
from isac_stackelberg.leader_env import (N_ACTIONS, CellResponse, EpisodeFinished, Grid, LeaderEnv, OffGrid,
                                         ResponseCache, State, action_table, trajectory_csv)


def cell(env, q):
    return env.grid.cell_of(q)


def aid(direction, level):
    return 3 * "UDFBLR".index(direction) + level


# ---------------------------------------------------------------- actions

def test_action_table_full(full):
    acts = action_table(full.mission)
    assert len(acts) == N_ACTIONS == 18
    assert acts[aid("U", 2)].dq == (0.0, 0.0, 10.0)
    assert acts[aid("F", 1)].dq == (10.0, 0.0, 0.0)
    for a in acts:
        if a.speed == 0:
            assert a.dq == (0.0, 0.0, 0.0)
    assert len({(a.direction, a.speed) for a in acts}) == 18
    assert [a.id for a in acts] == list(range(18))


def test_action_table_respects_speed_limits(desk):
    m = desk.mission
    for a in action_table(m):
        assert np.all(np.abs(a.dq) <= np.asarray(m.v_max) * m.dt + 1e-12)


# ---------------------------------------------------------------- grid

def test_grid_indexing(desk):
    g = Grid(desk.mission)
    assert g.size == 50
    assert np.array_equal(g.position(0), [-100, -100, 40])
    assert np.array_equal(g.position(49), [100, 100, 60])
    for c in range(g.size):
        assert g.cell_of(g.position(c)) == c
    with pytest.raises(OffGrid):
        g.cell_of((-99.0, -100.0, 40.0))
    with pytest.raises(OffGrid):
        g.position(50)


# ---------------------------------------------------------------- reward

def test_hover_distance_penalty(full):
    cfg = full.replace(**{"mission.q_i": (-90.0, 90.0, 50.0), "mission.q_f": (90.0, -90.0, 50.0)})
    env = stub_env(cfg)
    o = env.step(env.reset(), aid("U", 0))
    assert o.breakdown.p_dist == pytest.approx(-2.02, rel=1e-12)
    assert o.next.cell == env.reset().cell and not o.rejected


def test_goal_bonus(desk):
    env = stub_env(desk)
    s = State(cell(env, (50, -50, 60)), 5)
    o = env.step(s, aid("R", 1))
    assert env.grid.position(o.next.cell).tolist() == [50, -100, 60]
    assert o.done and o.done_reason == "goal"
    assert o.breakdown.bonus == 100.0
    assert in_goal_region(env.grid.position(o.next.cell), desk.mission)


def test_off_grid_rejected(desk):
    env = stub_env(desk)
    s = env.reset()
    o = env.step(s, aid("B", 2))
    assert o.rejected and o.next.cell == s.cell
    assert o.breakdown.bonus == -10.0
    assert not o.done and o.next.t_rem == s.t_rem - 1
    assert o.flight_power == pytest.approx(flight_power((0, 0, 0), desk.flight))


def test_obstacle_rejected(desk):
    env = stub_env(desk)
    s = State(cell(env, (-100, 50, 40)), 10)
    o = env.step(s, aid("F", 1))  # lands on the obstacle centre
    assert o.rejected and o.next.cell == s.cell and o.breakdown.bonus == -10.0


def test_timeout(desk):
    env = stub_env(desk)
    o = env.step(State(env.reset().cell, 1), aid("U", 0))
    assert o.done and o.done_reason == "timeout" and o.next.t_rem == 0
    assert o.breakdown.bonus == -10.0


def test_goal_wins_over_timeout(desk):
    env = stub_env(desk)
    o = env.step(State(cell(env, (50, -50, 60)), 1), aid("R", 1))
    assert o.done_reason == "goal" and o.breakdown.bonus == 100.0


def test_reward_formula(desk):
    env = stub_env(desk, u1=lambda q: 0.5 + 0.001 * q[0])
    m, rw = desk.mission, desk.reward
    s = env.reset()
    a = aid("R", 2)
    o = env.step(s, a)
    q2 = env.grid.position(o.next.cell)
    pf = flight_power(env.actions[a].velocity, desk.flight)
    u2 = 0.5 * o.u1 / 2.0 - 0.5 * pf / env.pf_max
    assert o.breakdown.r_main == pytest.approx(rw.eta1 * (9 / 10) * u2, rel=1e-12)
    d0 = np.linalg.norm(np.subtract(m.q_i, m.q_f))
    assert o.breakdown.p_dist == pytest.approx(-rw.eta2 * 1.1 * np.linalg.norm(q2 - m.q_f) / d0, rel=1e-12)
    assert o.reward == o.breakdown.r_main + o.breakdown.p_dist + o.breakdown.bonus


def test_terminal_step_refused(desk):
    env = stub_env(desk)
    with pytest.raises(EpisodeFinished):
        env.step(State(env.reset().cell, 0), 0)


@settings(max_examples=60, deadline=None)
@given(seq=st.lists(st.integers(0, 17), min_size=1, max_size=10))
def test_trajectories_stay_valid(desk, seq):
    env = stub_env(desk)
    m = desk.mission
    s = env.reset()
    for a in seq:
        if env.is_terminal(s):
            break
        o = env.step(s, a)
        again = env.step(s, a)
        assert again == o
        assert o.reward == o.breakdown.total
        q = env.grid.position(o.next.cell)
        assert m.z_min <= q[2] <= m.z_max
        assert all(np.linalg.norm(q - np.asarray(c)) >= m.d_min for c in m.obstacles)
        if o.done_reason == "goal":
            assert in_goal_region(q, m)
        if o.done_reason == "timeout":
            assert o.next.t_rem == 0
        s = o.next


# ---------------------------------------------------------------- reset, features

def test_reset(desk, full):
    env = stub_env(desk)
    assert env.reset() == State(cell(env, desk.mission.q_i), 10)
    assert env.reset() == env.reset()
    assert stub_env(full).reset().t_rem == 100


def test_features(desk):
    env = stub_env(desk)
    f = env.features(env.reset())
    assert np.array_equal(f, [-1.0, 1.0, -1.0, 1.0])
    for c in range(env.grid.size):
        x = env.features(State(c, 3))
        assert np.all(np.abs(x[:3]) <= 1) and x[3] == pytest.approx(0.3)


# ---------------------------------------------------------------- follower cache

def test_cache_hit_returns_same_u1(desk, desk_cache):
    env = LeaderEnv(desk, cache=desk_cache)
    c = env.reset().cell
    h0 = desk_cache.hits
    a, b = env.follower_response(c), env.follower_response(c)
    assert a.u1 == b.u1 and desk_cache.hits == h0 + 2


def test_prewarmed_grid(desk, desk_cache):
    assert len(desk_cache) == 50
    assert all(r.feasible for _, r in desk_cache.items())
    u = {r.u1 for _, r in desk_cache.items()}
    assert len(u) > 40  # distinct positions, distinct path loss

    def boom(q):
        raise AssertionError("follower solved despite a full cache")

    env = LeaderEnv(desk, responder=boom, cache=desk_cache)
    rng = np.random.default_rng(0)
    env.rollout(lambda s: int(rng.integers(18)))


def test_cache_round_trip(desk_cache):
    back = ResponseCache.from_json(desk_cache.to_json())
    assert [(c, r.summary()) for c, r in back.items()] == [(c, r.summary()) for c, r in desk_cache.items()]


def test_infeasible_cell_takes_sentinel(desk):
    bad = np.array([0.0, 0.0, 40.0])

    def responder(q):
        if np.array_equal(q, bad):
            return CellResponse(math.nan, False, "infeasible")
        return CellResponse(1.0 + q[0] / 1000, True, "stub")

    env = LeaderEnv(desk.replace(**{"mission.grid_shape": (3, 3, 2)}), responder=responder)
    u1, r = env.cell_u1(env.grid.cell_of(bad))
    assert not r.feasible and u1 == pytest.approx(1.1)


def test_sampled_mode_is_uncached(desk):
    env = LeaderEnv(desk.replace(**{"game.channel_mode": "sampled", "game.u1_max": 1.0}))
    r = env.follower_response(env.reset().cell)
    assert r.feasible and len(env.cache) == 0


def test_trajectory_export(desk):
    env = stub_env(desk)
    steps = env.rollout(lambda s: aid("R", 2))
    lines = trajectory_csv(env, steps).splitlines()
    assert lines[0] == "step,x,y,z,action,reward,r_main,p_dist,u1,P_f"
    assert lines[1].startswith("0,-100.0,100.0,40.0")
    assert len(lines) == 2 + len(steps)
