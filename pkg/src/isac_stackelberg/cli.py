"""Command-line entry point (``isac-game``)."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .channel import build_channels
from .config import (ValidationError, default_scenario, effective_seed, load_scenario, save_scenario,
                     validate)
from .ddqn import greedy_rollout, load_checkpoint, save_checkpoint
from .follower import InfeasibleScenario, ScaSettings, sca_solve, verify_solution, without_an_solve
from .leader_env import Grid, LeaderEnv, ResponseCache, trajectory_csv
from .orchestrator import (CNR_COLUMNS, brute_force_leader, prewarm_grid, run_baseline, run_stackelberg,
                           sweep_cnr, table_csv)


def _scenario(args):
    cfg = load_scenario(args.scenario) if args.scenario else default_scenario(args.profile)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    cfg = cfg.replace(seed=effective_seed(cfg))
    validate(cfg)
    return cfg


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_cache(path) -> ResponseCache | None:
    if not path:
        return None
    return ResponseCache.from_json(json.loads(Path(path).read_text()))


def cmd_validate_config(args) -> int:
    try:
        cfg = _scenario(args)
    except ValidationError as e:
        print(e, file=sys.stderr)
        return 1
    save_scenario(cfg, _out(args) / "scenario.toml")
    print("ok")
    return 0


def cmd_solve_follower(args) -> int:
    cfg = _scenario(args)
    grid = Grid(cfg.mission)
    q = grid.position(args.cell) if args.cell is not None else np.asarray(args.position or cfg.mission.q_i, float)
    ch = build_channels(q, cfg)
    solve = without_an_solve if args.no_an else sca_solve
    try:
        sol, trace = solve(ch, cfg, ScaSettings(eps=args.eps))
    except InfeasibleScenario as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return 2
    out = _out(args)
    (out / "sca_trace.csv").write_text(trace.to_csv())
    report = verify_solution(ch, sol, cfg)
    summary = {"position": [float(x) for x in q], "u1": sol.u1, "rsp": sol.rsp, "dlp": sol.dlp, "ulp": sol.ulp,
               "status": sol.status, "iterations": len(trace.u1), "verified": report.passed}
    (out / "follower.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0 if report.passed else 1


def cmd_sweep_cnr(args) -> int:
    cfg = _scenario(args)
    cnrs = [float(x) for x in args.cnr.split(",")]
    rows = sweep_cnr(cfg, cnrs, tuple(args.position))
    (_out(args) / "cnr_sweep.csv").write_text(table_csv(rows, CNR_COLUMNS))
    ok = True
    for cnr in cnrs:
        an = next(r for r in rows if r["cnr_db"] == cnr and r["scheme"] == "AN")
        na = next(r for r in rows if r["cnr_db"] == cnr and r["scheme"] == "noAN")
        print(f"cnr={cnr:g} dB  NPC AN={an['npc']:.4e}  noAN={na['npc']:.4e}  ratio={an['an_ratio']:.4f}")
        if not (math.isnan(na["npc"]) or an["npc"] <= na["npc"] * (1 + 1e-6)):
            ok = False
    return 0 if ok else 1


def cmd_prewarm_cache(args) -> int:
    cfg = _scenario(args)
    cache = prewarm_grid(cfg, workers=args.workers)
    (_out(args) / "cache.json").write_text(json.dumps(cache.to_json(), indent=1, sort_keys=True) + "\n")
    bad = sum(not r.feasible for _, r in cache.items())
    print(f"{len(cache)} cells, {bad} infeasible")
    return 0


def cmd_train(args) -> int:
    cfg = _scenario(args)
    cache = _load_cache(args.cache)
    run = run_baseline if args.baseline else run_stackelberg
    res = run(cfg, cache=cache, episodes=args.episodes)
    out = res.write(_out(args))
    save_checkpoint(res.agent, out / "checkpoint.json")
    print(f"goal rate (last 50) {res.goal_rate:.2f}  greedy return {res.greedy_return:.3f}  "
          f"mean U2 (last 50) {res.mean_u2:.4f}")
    if args.min_goal_rate is not None and res.goal_rate < args.min_goal_rate:
        return 1
    return 0


def cmd_evaluate(args) -> int:
    cfg = _scenario(args)
    agent = load_checkpoint(args.checkpoint)
    env = LeaderEnv(cfg, cache=_load_cache(args.cache))
    steps, G = greedy_rollout(agent.online, env, cfg.agent.gamma)
    (_out(args) / "trajectory.csv").write_text(trajectory_csv(env, steps))
    reason = steps[-1][2].done_reason if steps else "none"
    print(f"return {G:.4f}  steps {len(steps)}  end {reason}")
    return 0


def cmd_oracle(args) -> int:
    cfg = _scenario(args)
    env = LeaderEnv(cfg, cache=_load_cache(args.cache))
    seq, v = brute_force_leader(env, args.horizon, cfg.agent.gamma)
    (_out(args) / "oracle.json").write_text(json.dumps({"horizon": args.horizon, "actions": list(seq),
                                                        "return": v}, indent=2) + "\n")
    print(f"optimum {v:.6f} via {list(seq)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isac-game", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="TOML or JSON scenario file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="runs/latest")
    common.add_argument("--profile", choices=("desk", "full"), default="desk")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate-config", parents=[common])
    s.set_defaults(fn=cmd_validate_config)

    s = sub.add_parser("solve-follower", parents=[common])
    s.add_argument("--cell", type=int)
    s.add_argument("--position", type=float, nargs=3)
    s.add_argument("--no-an", action="store_true")
    s.add_argument("--eps", type=float, default=1e-3)
    s.set_defaults(fn=cmd_solve_follower)

    s = sub.add_parser("sweep-cnr", parents=[common])
    # comma list, so "-inf" is not mistaken for an option: --cnr=-inf,0,10,20
    s.add_argument("--cnr", default="-inf,0,10,20")
    s.add_argument("--position", type=float, nargs=3, default=(25.0, 45.0, 50.0))
    s.set_defaults(fn=cmd_sweep_cnr)

    s = sub.add_parser("prewarm-cache", parents=[common])
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(fn=cmd_prewarm_cache)

    s = sub.add_parser("train", parents=[common])
    s.add_argument("--cache")
    s.add_argument("--episodes", type=int)
    s.add_argument("--baseline", action="store_true")
    s.add_argument("--min-goal-rate", type=float)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("evaluate", parents=[common])
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--cache")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("oracle", parents=[common])
    s.add_argument("--horizon", type=int, default=5)
    s.add_argument("--cache")
    s.set_defaults(fn=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
