"""Acceptance criteria 1-11 on the desk profile.

Each test records a one-line verdict that is printed in the terminal
summary.  RL criteria use the 5 fixed seeds with a >= 4/5 pass rule.
"""
import math
import time

import numpy as np
import pytest
import scipy.linalg as sla

from conftest import ACCEPTANCE, SEEDS, random_psd
from test_metrics import make_channels, make_solution, scalar_channels
from isac_stackelberg.channel import build_channels
from isac_stackelberg.config import SPEED_OF_LIGHT, SensingConfig, derive_stream
from isac_stackelberg.ddqn import MlpParams, greedy_rollout, loss_and_gradients, stats_csv
from isac_stackelberg.follower import (InfeasibleScenario, f1_bound, log2_upper, matrix_fractional_lower,
                                       sca_solve, verify_solution)
from isac_stackelberg.leader_env import LeaderEnv, trajectory_csv
from isac_stackelberg.metrics import (FollowerSolution, crlb_range, illumination_trace, optimal_receive_beamformer,
                                      psi_matrix, transmit_covariance, ul_sinr, ul_sinr_optimal)
from isac_stackelberg.orchestrator import (CNR_COLUMNS, brute_force_leader, cells_csv, run_baseline,
                                           run_stackelberg, sweep_cnr, table_csv)

pytestmark = pytest.mark.slow


def record(key, ok, detail):
    ACCEPTANCE[key] = (bool(ok), detail)
    print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def rank_ratio(V):
    w = np.linalg.eigvalsh(0.5 * (V + V.conj().T))
    return max(w[-2], 0.0) / w[-1]


# ---------------------------------------------------------------- shared runs

@pytest.fixture(scope="module")
def runs(desk, desk_cache):
    """Full-length training for every (lambda, seed) pair and the baseline."""
    out = {}
    for seed in SEEDS:
        for lam in (0.0, 0.5, 1.0):
            cfg = desk.replace(**{"game.lam": lam, "seed": seed})
            out[lam, seed] = run_stackelberg(cfg, cache=desk_cache)
        out["baseline", seed] = run_baseline(desk.replace(seed=seed), cache=desk_cache)
    return out


# ---------------------------------------------------------------- follower

def test_criterion_1_sca_convergence(desk, desk_channels):
    t0 = time.perf_counter()
    _, tr = sca_solve(desk_channels, desk)
    dt = time.perf_counter() - t0
    u = np.array(tr.u1)
    mono = bool(np.all(np.diff(u) <= 1e-6 * u[:-1]))
    ok = mono and len(u) <= 20 and tr.f_err[-1] <= 1e-3 and dt < 60
    record(1, ok, f"{len(u)} iterations, final f_err {tr.f_err[-1]:.1e}, monotone={mono}, {dt:.1f} s")


def test_criterion_2_true_constraints(desk, desk_cache, desk_channels):
    checked, failed = 0, []
    sol, _ = sca_solve(desk_channels, desk)
    sols = [(desk.mission.q_i, desk, sol)]
    grid = LeaderEnv(desk, cache=desk_cache).grid
    sols += [(grid.position(c), desk, r.solution) for c, r in desk_cache.items() if r.feasible]
    for cnr in (0.0, 20.0):
        c = desk.replace(**{"channel.clutter.cnr_db": cnr})
        sols.append(((25.0, 45.0, 50.0), c, sca_solve(build_channels((25.0, 45.0, 50.0), c), c)[0]))
    for q, cfg, s in sols:
        rep = verify_solution(build_channels(q, cfg), s, cfg, tol=1e-4)
        checked += 1
        if not rep.passed:
            failed.append((tuple(q), rep.failures()))
    record(2, not failed, f"{checked - len(failed)}/{checked} accepted solutions verified")


def test_criterion_3_rank_one(desk):
    m = desk.mission
    lo = np.array([m.grid_lower[0], m.grid_lower[1], m.z_min])
    hi = np.array([m.grid_upper[0], m.grid_upper[1], m.z_max])
    pos_rng = np.random.default_rng(303)
    stream = derive_stream(desk.seed, "rank-check")
    worst, raw, n_ok, skipped = 0.0, 0.0, 0, 0
    while n_ok < 12:
        q = pos_rng.uniform(lo, hi)
        cfg = desk.replace(**{"game.channel_mode": "sampled"})
        ch = build_channels(q, cfg, "sampled", stream)
        try:
            sol, tr = sca_solve(ch, cfg, enforce_rank=False)
        except InfeasibleScenario:
            skipped += 1
            continue
        worst = max(worst, max(rank_ratio(V) for V in sol.V))
        raw = max(raw, tr.raw_rank[-1])
        n_ok += 1
    # the rank map moves off-channel parts of V_k into W at no cost; the raw
    # solver output must be rank-one as well so the map does no hidden work
    record(3, worst <= 1e-4 and raw <= 1e-4, f"{n_ok} sampled instances, worst lambda2/lambda1 {worst:.1e} "
                             f"(raw solver output {raw:.1e}; {skipped} infeasible draws skipped)")


def test_criterion_4_an_benefit(desk):
    rows = sweep_cnr(desk, [-math.inf, 0.0, 10.0, 20.0])
    an = [r for r in rows if r["scheme"] == "AN"]
    na = [r for r in rows if r["scheme"] == "noAN"]
    better = all(a["npc"] <= b["npc"] * (1 + 1e-6) for a, b in zip(an, na))
    rsp = [r["rsp"] for r in an]
    tol = 1e-6 * max(rsp)
    rising = all(b >= a - tol for a, b in zip(rsp, rsp[1:]))
    ratios = ", ".join(f"{r['an_ratio']:.3f}" for r in an)
    print(table_csv(rows, CNR_COLUMNS))
    record(4, better and rising, f"AN/noAN NPC ratios [{ratios}], RSP nondecreasing={rising}")


# ---------------------------------------------------------------- oracles

def test_criterion_5_receive_beamformer(rng):
    worst, beaten = 0.0, True
    for _ in range(100):
        ch, sol = make_channels(rng, M=4), make_solution(rng, M=4)
        S = transmit_covariance(sol)
        for l in range(ch.L):
            u = optimal_receive_beamformer(l, ch, sol)
            h = ch.h_la[l]
            top = sla.eigh(sol.p[l] * np.outer(h, h.conj()), psi_matrix(l, ch, sol.p, S), eigvals_only=True)[-1]
            g = ul_sinr(l, ch, sol, u)
            worst = max(worst, abs(g - top) / top, abs(ul_sinr_optimal(l, ch, sol) - top) / top)
            R = rng.standard_normal((100, 4)) + 1j * rng.standard_normal((100, 4))
            beaten &= all(ul_sinr(l, ch, sol, r / np.linalg.norm(r)) <= g * (1 + 1e-12) for r in R)
    record(5, worst <= 1e-8 and beaten,
           f"max relative gap to generalized eig {worst:.1e}, random vectors beaten={beaten}")


def test_criterion_6_linearizations(rng):
    n = 10_000
    t, t_lo = rng.uniform(-10, 10, n), rng.uniform(-10, 10, n)
    mu, mu_lo = rng.uniform(1e-3, 10, n), rng.uniform(1e-3, 10, n)
    f1_ok = np.all(f1_bound(t, mu, t_lo, mu_lo) <= t ** 2 / mu * (1 + 1e-12) + 1e-12)
    f1_tan = np.allclose(f1_bound(t_lo, mu_lo, t_lo, mu_lo), t_lo ** 2 / mu_lo, rtol=1e-12)

    x, x_lo = rng.uniform(-1 + 1e-9, 100, n), rng.uniform(0, 100, n)
    log_ok = all(math.log2(1 + a) <= log2_upper(a, b) + 1e-12 for a, b in zip(x, x_lo))
    log_tan = all(abs(log2_upper(b, b) - math.log2(1 + b)) <= 1e-12 * max(1, math.log2(1 + b)) for b in x_lo)

    mf_ok = mf_tan = True
    for _ in range(n):
        m = int(rng.integers(1, 5))
        h = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        P, P0 = random_psd(rng, m) + 1e-3 * np.eye(m), random_psd(rng, m) + 1e-3 * np.eye(m)
        exact = float(np.real(h.conj() @ np.linalg.solve(P, h)))
        mf_ok &= matrix_fractional_lower(h, P, P0) <= exact * (1 + 1e-9) + 1e-12
        e0 = float(np.real(h.conj() @ np.linalg.solve(P0, h)))
        mf_tan &= abs(matrix_fractional_lower(h, P0, P0) - e0) <= 1e-9 * e0
    ok = f1_ok and f1_tan and log_ok and log_tan and mf_ok and mf_tan
    record(6, ok, f"1e4 draws each: f1 bound/tangent {f1_ok}/{f1_tan}, log {log_ok}/{log_tan}, "
                  f"matrix-fractional {mf_ok}/{mf_tan}")


def test_criterion_7_crlb(rng):
    def scalar(B):
        ch = scalar_channels([1.0], zeta0_sq=1.0)
        sol = FollowerSolution(V=np.zeros((0, 1, 1)), W=np.eye(1), p=np.zeros(1))
        return crlb_range(ch, sol, SensingConfig(bandwidth=B))

    B = 30e6
    ref = 3 * SPEED_OF_LIGHT ** 2 / (8 * math.pi ** 2 * B ** 2)
    scal = abs(scalar(B) - ref) <= 1e-12 * ref
    quad = abs(scalar(2 * B) - scalar(B) / 4) <= 1e-12 * ref
    worst = 0.0
    for _ in range(100):
        ch, sol = make_channels(rng, M=4), make_solution(rng, M=4)
        S = transmit_covariance(sol)
        a, b = illumination_trace(ch, S, "solve"), illumination_trace(ch, S, "eig")
        worst = max(worst, abs(a - b) / abs(b))
    record(7, scal and quad and worst <= 1e-10,
           f"scalar CRLB {scalar(B):.4f} m^2 (ref {ref:.4f}), 2B ratio {scalar(B) / scalar(2 * B):.6f}, "
           f"two-way trace gap {worst:.1e}")


def test_criterion_8_gradients(rng):
    worst = 0.0
    for trial in range(5):
        p = MlpParams.init((4, 16, 8, 18), np.random.default_rng(trial))
        s, a, y = rng.uniform(-1, 1, (32, 4)), rng.integers(0, 18, 32), rng.standard_normal(32)
        _, g = loss_and_gradients(p, s, a, y)
        x0, gx = p.flat(), g.flat()
        h = 1e-6
        for i in range(x0.size):
            e = np.zeros_like(x0)
            e[i] = h
            fd = (loss_and_gradients(p.with_flat(x0 + e), s, a, y)[0]
                  - loss_and_gradients(p.with_flat(x0 - e), s, a, y)[0]) / (2 * h)
            # relative to the gradient scale so exact zeros (dead ReLUs) do not divide by zero
            worst = max(worst, abs(fd - gx[i]) / max(abs(gx[i]), abs(fd), 1e-6))
    record(8, worst <= 1e-4, f"max relative finite-difference error {worst:.1e} over 5 networks")


# ---------------------------------------------------------------- leader

def test_criterion_9_learning(desk, desk_cache, runs):
    env = LeaderEnv(desk, cache=desk_cache)
    _, opt = brute_force_leader(env, 5, desk.agent.gamma)
    goal_ok, ret_ok, parts = 0, 0, []
    for seed in SEEDS:
        r = runs[0.5, seed]
        _, G = greedy_rollout(r.params, r.env, desk.agent.gamma, max_steps=5)
        goal_ok += r.goal_rate >= 0.9
        ret_ok += G >= 0.9 * opt
        parts.append(f"s{seed}: goal {r.goal_rate:.2f}, ratio {G / opt:.3f}")
    record(9, goal_ok >= 4 and ret_ok >= 4,
           f"goal>=0.9 in {goal_ok}/5, return>=0.9*oracle ({opt:.2f}) in {ret_ok}/5; " + "; ".join(parts))


def test_criterion_10a_lambda_trends(runs):
    u1_ok = sum(runs[1.0, s].sum_u1 > runs[0.0, s].sum_u1 for s in SEEDS)
    pf_ok = sum(runs[0.0, s].sum_pf <= min(runs[lam, s].sum_pf for lam in (0.5, 1.0)) for s in SEEDS)
    record("10a", u1_ok >= 4 and pf_ok >= 4, f"sum u1(lam=1) > sum u1(lam=0) in {u1_ok}/5, "
                                             f"lam=0 smallest sum P_f in {pf_ok}/5")


def test_criterion_10b_beats_baseline(runs):
    wins = sum(runs[0.5, s].mean_u2 >= runs["baseline", s].mean_u2 for s in SEEDS)
    prop = np.mean([runs[0.5, s].mean_u2 for s in SEEDS])
    base = np.mean([runs["baseline", s].mean_u2 for s in SEEDS])
    record("10b", wins >= 4, f"proposed >= baseline final-50 mean U2 in {wins}/5 "
                             f"(means {prop:.3f} vs {base:.3f})")


def test_criterion_11_determinism(desk, desk_cache, runs):
    cfg = desk.replace(seed=SEEDS[1])
    a, b = runs[0.5, SEEDS[1]], run_stackelberg(cfg, cache=desk_cache)
    same = (stats_csv(a.stats) == stats_csv(b.stats)
            and trajectory_csv(a.env, a.trajectory) == trajectory_csv(b.env, b.trajectory)
            and cells_csv(a.env) == cells_csv(b.env))
    rows = [table_csv(sweep_cnr(desk, [10.0]), CNR_COLUMNS) for _ in range(2)]
    env = LeaderEnv(desk, cache=desk_cache)
    c = env.reset().cell
    hit = env.follower_response(c).u1 == env.follower_response(c).u1
    record(11, same and rows[0] == rows[1] and hit,
           f"run CSVs identical={same}, sweep CSV identical={rows[0] == rows[1]}, cache hit identical={hit}")
