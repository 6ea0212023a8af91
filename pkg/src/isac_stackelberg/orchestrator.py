"""Two-time-scale game runs, baselines, the exhaustive leader oracle and sweeps.

The fast time scale is the follower: every grid cell is solved once and
cached.  The slow time scale trains the leader against that cache.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .channel import build_channels
from .config import ScenarioConfig, derive_stream, digest
from .ddqn import Agent, EpisodeStats, MlpParams, greedy_rollout, stats_csv, train
from .follower import (InfeasibleScenario, ScaSettings, SolverFailure, initialize_local_point, sca_solve,
                       without_an_solve)
from .leader_env import CellResponse, LeaderEnv, ResponseCache, trajectory_csv

CELL_COLUMNS = ("cell", "x", "y", "z", "u1", "feasible", "status", "rsp", "dlp", "ulp", "iterations")
CNR_COLUMNS = ("cnr_db", "scheme", "rsp", "dlp", "ulp", "npc", "status", "rank_ratio", "an_ratio")
LAMBDA_COLUMNS = ("lam", "seed", "goal_rate", "mean_u2", "greedy_return", "steps", "sum_u1", "sum_pf")
MAX_ROLLOUTS = 2_000_000


class HorizonTooLarge(ValueError):
    pass


@dataclass
class RunManifest:
    digest: str
    seed: int
    profile: str
    version: str
    scheme: str
    start_cell: int
    start_position: list
    u1_max: float
    pf_max: float
    cache: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass
class ExperimentResult:
    manifest: RunManifest
    stats: list[EpisodeStats]
    trajectory: list
    greedy_return: float
    agent: Agent
    env: LeaderEnv = field(repr=False)

    @property
    def params(self) -> MlpParams:
        return self.agent.online

    @property
    def goal_rate(self) -> float:
        tail = self.stats[-50:]
        return sum(s.reached_goal for s in tail) / max(len(tail), 1)

    @property
    def mean_u2(self) -> float:
        return float(np.mean([s.mean_u2 for s in self.stats[-50:]]))

    @property
    def sum_u1(self) -> float:
        return float(sum(o.u1 for _, _, o in self.trajectory))

    @property
    def sum_pf(self) -> float:
        return float(sum(o.flight_power for _, _, o in self.trajectory))

    def write(self, out: str | Path) -> Path:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(self.manifest.to_json() + "\n")
        (out / "stats.csv").write_text(stats_csv(self.stats))
        (out / "trajectory.csv").write_text(trajectory_csv(self.env, self.trajectory))
        (out / "follower_cells.csv").write_text(cells_csv(self.env))
        return out


def cells_csv(env: LeaderEnv) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CELL_COLUMNS)
    for c, r in env.cache.items():
        # a negative key is the single response shared by every cell
        q = env.grid.position(c if c >= 0 else env.start_cell)
        s = r.summary()
        w.writerow([c, *(repr(float(x)) for x in q), repr(s["u1"]), int(s["feasible"]), s["status"],
                    repr(s["rsp"]), repr(s["dlp"]), repr(s["ulp"]), s["iterations"]])
    return buf.getvalue()


def prewarm_grid(cfg: ScenarioConfig, settings: ScaSettings = ScaSettings(), workers: int = 1) -> ResponseCache:
    env = LeaderEnv(cfg, settings)
    return env.prewarm(workers)


def _run(cfg: ScenarioConfig, env: LeaderEnv, scheme: str, episodes: int | None, t0: float) -> ExperimentResult:
    t1 = time.perf_counter()
    stream = derive_stream(cfg.seed, "agent")
    res = train(env, cfg.agent, stream, episodes)
    steps, G = greedy_rollout(res.params, env, cfg.agent.gamma)
    man = RunManifest(
        digest=digest(cfg), seed=cfg.seed, profile=cfg.profile, version=__version__, scheme=scheme,
        start_cell=env.start_cell, start_position=[float(x) for x in env.grid.position(env.start_cell)],
        u1_max=env.u1_max, pf_max=env.pf_max, cache=env.cache.stats(),
        timings={"follower_s": round(t1 - t0, 3), "leader_s": round(time.perf_counter() - t1, 3)},
    )
    return ExperimentResult(man, res.stats, steps, G, res.agent, env)


def run_stackelberg(cfg: ScenarioConfig, cache: ResponseCache | None = None, episodes: int | None = None,
                    settings: ScaSettings = ScaSettings()) -> ExperimentResult:
    """Prewarm the follower over the grid, then train the leader against it."""
    t0 = time.perf_counter()
    env = LeaderEnv(cfg, settings, cache=cache)
    if not env.sampled:
        env.prewarm()
    return _run(cfg, env, "proposed", episodes, t0)


def frozen_response(cfg: ScenarioConfig, settings: ScaSettings = ScaSettings()) -> CellResponse:
    """Phase-1 (feasibility) allocation at the start cell, before any SCA refinement."""
    env = LeaderEnv(cfg, settings)
    q = env.grid.position(env.start_cell)
    ch = build_channels(q, cfg)
    _, sol = initialize_local_point(ch, cfg, settings)
    return CellResponse(sol.u1, True, "frozen", sol.rsp, sol.dlp, sol.ulp, 0, sol)


def run_baseline(cfg: ScenarioConfig, cache: ResponseCache | None = None, episodes: int | None = None,
                 settings: ScaSettings = ScaSettings()) -> ExperimentResult:
    """Same leader training, but the network never re-optimises.

    The U2 normaliser is taken from the adaptive follower's grid (``cache``,
    prewarmed if missing) so both schemes are scored on one scale.
    """
    t0 = time.perf_counter()
    if cfg.game.u1_max is None:
        ref = LeaderEnv(cfg, settings, cache=cache)
        cfg = cfg.replace(**{"game.u1_max": ref.u1_max})
    frozen = frozen_response(cfg, settings)
    env = LeaderEnv(cfg, settings, responder=lambda q: frozen, key=lambda cell: -1)
    return _run(cfg, env, "baseline", episodes, t0)


def brute_force_leader(env: LeaderEnv, horizon: int, gamma: float):
    """Exhaustive best action sequence of length <= ``horizon`` from reset.

    Memoised on (state, depth), which is exact because transitions are
    deterministic.  Ties go to the lexicographically smallest sequence.
    """
    if horizon < 1 or len(env.actions) ** horizon > MAX_ROLLOUTS:
        raise HorizonTooLarge(f"horizon {horizon} exceeds {MAX_ROLLOUTS} rollouts")
    memo: dict = {}

    def best(s, d):
        key = (s, d)
        if key in memo:
            return memo[key]
        top_v, top_seq = -math.inf, ()
        for a in range(len(env.actions)):
            o = env.step(s, a)
            v, seq = o.reward, (a,)
            if not o.done and d > 1:
                tail_v, tail = best(o.next, d - 1)
                v, seq = v + gamma * tail_v, seq + tail
            if v > top_v:
                top_v, top_seq = v, seq
        memo[key] = (top_v, top_seq)
        return memo[key]

    s0 = env.reset()
    if env.is_terminal(s0):
        return (), 0.0
    v, seq = best(s0, horizon)
    return seq, float(v)


def _rank_ratio(sol) -> float:
    r = 0.0
    for V in sol.V:
        w = np.linalg.eigvalsh(0.5 * (V + V.conj().T))
        r = max(r, max(w[-2], 0.0) / w[-1] if len(w) > 1 and w[-1] > 0 else 0.0)
    return float(r)


def sweep_cnr(cfg: ScenarioConfig, cnr_list, q_e=(25.0, 45.0, 50.0),
              settings: ScaSettings = ScaSettings()) -> list[dict]:
    """Power split with and without AN at a fixed eavesdropper position.

    The no-AN optimum is feasible for the AN problem and is handed over as a
    warm start, so the AN row can only improve on it.
    """
    rows = []
    for cnr in cnr_list:
        c = cfg.replace(**{"channel.clutter.cnr_db": float(cnr)})
        ch = build_channels(q_e, c)
        out = {}
        try:
            na, _ = without_an_solve(ch, c, settings, enforce_rank=False)
            out["noAN"] = na
        except (InfeasibleScenario, SolverFailure) as e:
            out["noAN"] = e
        try:
            warm = out["noAN"] if not isinstance(out["noAN"], Exception) else None
            an, _ = sca_solve(ch, c, settings, warm_start=warm)
            out["AN"] = an
        except (InfeasibleScenario, SolverFailure) as e:
            out["AN"] = e
        ok = not isinstance(out["AN"], Exception) and not isinstance(out["noAN"], Exception)
        ratio = out["AN"].u1 / out["noAN"].u1 if ok else math.nan
        for scheme in ("AN", "noAN"):
            sol = out[scheme]
            if isinstance(sol, Exception):
                rows.append({"cnr_db": cnr, "scheme": scheme, "rsp": math.nan, "dlp": math.nan, "ulp": math.nan,
                             "npc": math.nan, "status": type(sol).__name__, "rank_ratio": math.nan,
                             "an_ratio": ratio})
            else:
                rows.append({"cnr_db": cnr, "scheme": scheme, "rsp": sol.rsp, "dlp": sol.dlp, "ulp": sol.ulp,
                             "npc": sol.u1, "status": sol.status, "rank_ratio": _rank_ratio(sol),
                             "an_ratio": ratio})
    return rows


def sweep_lambda(cfg: ScenarioConfig, lam_list, seeds, cache: ResponseCache | None = None,
                 episodes: int | None = None) -> list[dict]:
    if cache is None:
        cache = prewarm_grid(cfg)
    rows = []
    for lam in lam_list:
        for seed in seeds:
            c = cfg.replace(**{"game.lam": float(lam), "seed": int(seed)})
            r = run_stackelberg(c, cache=cache, episodes=episodes)
            rows.append({"lam": lam, "seed": seed, "goal_rate": r.goal_rate, "mean_u2": r.mean_u2,
                         "greedy_return": r.greedy_return, "steps": len(r.trajectory),
                         "sum_u1": r.sum_u1, "sum_pf": r.sum_pf})
    return rows


def table_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in columns])
    return buf.getvalue()
