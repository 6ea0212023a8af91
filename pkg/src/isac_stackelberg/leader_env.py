"""Grid MDP seen by the eavesdropping UAV.

States are grid cells plus the remaining number of slots.  Every action
moves along one axis at one of three speed levels, and the base station's
best response at each cell is memoised so an episode never repeats an SCA
solve.
"""
from __future__ import annotations

import csv
import io
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .channel import build_channels
from .config import MissionConfig, ScenarioConfig, derive_stream
from .follower import InfeasibleScenario, ScaSettings, sca_solve
from .kinematics import check_mobility, flight_power, in_goal_region
from .metrics import FollowerSolution

# (label, unit vector); U/D move along z, F/B along x, L/R along y
DIRECTIONS = (
    ("U", (0.0, 0.0, 1.0)),
    ("D", (0.0, 0.0, -1.0)),
    ("F", (1.0, 0.0, 0.0)),
    ("B", (-1.0, 0.0, 0.0)),
    ("L", (0.0, 1.0, 0.0)),
    ("R", (0.0, -1.0, 0.0)),
)
SPEED_LEVELS = (0.0, 0.5, 1.0)
N_ACTIONS = len(DIRECTIONS) * len(SPEED_LEVELS)

TRAJECTORY_COLUMNS = ("step", "x", "y", "z", "action", "reward", "r_main", "p_dist", "u1", "P_f")


class EpisodeFinished(RuntimeError):
    pass


class OffGrid(ValueError):
    pass


@dataclass(frozen=True)
class Action:
    id: int
    direction: str
    speed: float          # fraction of v_max on the moving axis
    velocity: tuple[float, float, float]
    dq: tuple[float, float, float]


def action_table(mission: MissionConfig) -> tuple[Action, ...]:
    """All direction/speed pairs, ``id = 3 * direction + speed_level``."""
    rows = []
    vmax = np.asarray(mission.v_max, dtype=float)
    for d, (label, unit) in enumerate(DIRECTIONS):
        for s, frac in enumerate(SPEED_LEVELS):
            v = np.asarray(unit) * vmax * frac + 0.0  # +0.0 clears negative zeros
            dq = v * mission.dt + 0.0
            rows.append(Action(3 * d + s, label, frac, tuple(float(x) for x in v), tuple(float(x) for x in dq)))
    return tuple(rows)


@dataclass(frozen=True)
class State:
    cell: int
    t_rem: int


@dataclass(frozen=True)
class Breakdown:
    r_main: float
    p_dist: float
    bonus: float

    @property
    def total(self) -> float:
        return self.r_main + self.p_dist + self.bonus


@dataclass(frozen=True)
class StepOutcome:
    next: State
    reward: float
    breakdown: Breakdown
    done: bool
    done_reason: str      # goal | timeout | none
    rejected: bool
    u1: float
    flight_power: float
    follower: "CellResponse"


class Grid:
    """Regular lattice over the operating region; cells are flat C-order indices."""

    def __init__(self, mission: MissionConfig):
        self.shape = tuple(int(n) for n in mission.grid_shape)
        self.lower = np.asarray(mission.grid_lower, dtype=float)
        self.upper = np.asarray(mission.grid_upper, dtype=float)
        self.step = np.asarray(mission.grid_step, dtype=float)
        self.size = int(np.prod(self.shape))

    def position(self, cell: int) -> np.ndarray:
        if not 0 <= cell < self.size:
            raise OffGrid(f"cell {cell} outside grid of {self.size}")
        idx = np.array(np.unravel_index(cell, self.shape), dtype=float)
        return self.lower + idx * self.step

    def nearest(self, q) -> int:
        q = np.asarray(q, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            idx = np.where(self.step > 0, np.rint((q - self.lower) / np.where(self.step > 0, self.step, 1.0)), 0)
        idx = np.clip(idx, 0, np.asarray(self.shape) - 1).astype(int)
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def cell_of(self, q, tol: float = 1e-6) -> int:
        """Exact lookup; raises when ``q`` is not a lattice point."""
        c = self.nearest(q)
        if np.max(np.abs(self.position(c) - np.asarray(q, float))) > tol:
            raise OffGrid(f"{list(q)} is not a grid point")
        return c

    def positions(self) -> np.ndarray:
        return np.array([self.position(c) for c in range(self.size)])


@dataclass
class CellResponse:
    u1: float
    feasible: bool
    status: str
    rsp: float = math.nan
    dlp: float = math.nan
    ulp: float = math.nan
    iterations: int = 0
    solution: FollowerSolution | None = field(default=None, repr=False, compare=False)

    def summary(self) -> dict:
        return {"u1": self.u1, "feasible": self.feasible, "status": self.status,
                "rsp": self.rsp, "dlp": self.dlp, "ulp": self.ulp, "iterations": self.iterations}


class ResponseCache:
    """Cell -> follower response, with hit/miss counters.

    Reads are lock free; insertion takes a lock so a parallel prewarm cannot
    interleave writes.
    """

    def __init__(self):
        self._data: dict[int, CellResponse] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, cell: int) -> bool:
        return cell in self._data

    def get(self, cell: int) -> CellResponse | None:
        r = self._data.get(cell)
        if r is None:
            self.misses += 1
        else:
            self.hits += 1
        return r

    def put(self, cell: int, resp: CellResponse) -> CellResponse:
        with self._lock:
            return self._data.setdefault(cell, resp)

    def items(self):
        return sorted(self._data.items())

    def stats(self) -> dict:
        return {"size": len(self), "hits": self.hits, "misses": self.misses}

    def to_json(self) -> dict:
        return {str(c): r.summary() for c, r in self.items()}

    @classmethod
    def from_json(cls, d: dict) -> "ResponseCache":
        """Rebuild from summaries; the stored beamformers are not restored."""
        out = cls()
        for c, r in d.items():
            u1 = math.nan if r["u1"] is None else float(r["u1"])
            out._data[int(c)] = CellResponse(u1, bool(r["feasible"]), r["status"], float(r["rsp"]),
                                             float(r["dlp"]), float(r["ulp"]), int(r["iterations"]))
        return out


def solve_cell(cfg: ScenarioConfig, q, settings: ScaSettings = ScaSettings()) -> CellResponse:
    ch = build_channels(q, cfg)
    try:
        sol, trace = sca_solve(ch, cfg, settings)
    except InfeasibleScenario:
        return CellResponse(math.nan, False, "infeasible")
    return CellResponse(sol.u1, True, sol.status, sol.rsp, sol.dlp, sol.ulp, len(trace.u1), sol)


class LeaderEnv:
    """Deterministic leader MDP over the grid.

    ``responder`` maps a position to a :class:`CellResponse`; by default it
    runs the SCA follower.  Baselines swap it for a frozen allocation and
    collapse the cache ``key`` so every cell shares one entry.
    """

    def __init__(self, cfg: ScenarioConfig, settings: ScaSettings = ScaSettings(),
                 responder: Callable[[np.ndarray], CellResponse] | None = None,
                 cache: ResponseCache | None = None, key: Callable[[int], int] | None = None):
        self.cfg = cfg
        self.mission = cfg.mission
        self.grid = Grid(cfg.mission)
        self.actions = action_table(cfg.mission)
        self.settings = settings
        self.sampled = cfg.game.channel_mode == "sampled"
        self._stream = derive_stream(cfg.seed, "channels") if self.sampled else None
        self.responder = responder or (lambda q: solve_cell(cfg, q, settings))
        self.cache = cache if cache is not None else ResponseCache()
        self.key = key or (lambda cell: cell)
        self.start_cell = self.grid.nearest(cfg.mission.q_i)
        self._pf = [flight_power(a.velocity, cfg.flight) for a in self.actions]
        self.pf_max = cfg.game.pf_max if cfg.game.pf_max is not None else max(self._pf)
        self._u1_max = cfg.game.u1_max
        self._sentinel: float | None = None
        self._d0 = float(np.linalg.norm(np.asarray(cfg.mission.q_i) - np.asarray(cfg.mission.q_f)))

    # -------------------------------------------------------------- follower
    def follower_response(self, cell: int) -> CellResponse:
        q = self.grid.position(cell)
        if self.sampled:
            # no caching: every visit draws fresh small-scale fading
            ch = build_channels(q, self.cfg, mode="sampled", stream=self._stream)
            try:
                sol, trace = sca_solve(ch, self.cfg, self.settings)
                return CellResponse(sol.u1, True, sol.status, sol.rsp, sol.dlp, sol.ulp, len(trace.u1), sol)
            except InfeasibleScenario:
                return CellResponse(math.nan, False, "infeasible")
        k = self.key(cell)
        hit = self.cache.get(k)
        if hit is not None:
            return hit
        return self.cache.put(k, self.responder(q))

    def prewarm(self, workers: int = 1) -> ResponseCache:
        first: dict[int, int] = {}
        for c in range(self.grid.size):
            if self.key(c) not in self.cache:
                first.setdefault(self.key(c), c)
        keys, todo = list(first), list(first.values())
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                for k, r in zip(keys, ex.map(lambda c: self.responder(self.grid.position(c)), todo)):
                    self.cache.put(k, r)
        else:
            for k, c in zip(keys, todo):
                self.cache.put(k, self.responder(self.grid.position(c)))
        return self.cache

    def _feasible_max(self) -> float:
        self.prewarm()
        vals = [r.u1 for _, r in self.cache.items() if r.feasible]
        if not vals:
            raise InfeasibleScenario("no feasible cell in the grid")
        return max(vals)

    def cell_u1(self, cell: int) -> tuple[float, CellResponse]:
        """u1 at ``cell``; infeasible cells take the grid-maximum feasible value."""
        r = self.follower_response(cell)
        if r.feasible:
            return r.u1, r
        if self._sentinel is None:
            self._sentinel = self._feasible_max()
        return self._sentinel, r

    @property
    def u1_max(self) -> float:
        if self._u1_max is None:
            self._u1_max = self._feasible_max()
        return self._u1_max

    # ------------------------------------------------------------------ MDP
    def reset(self) -> State:
        return State(self.start_cell, int(self.mission.N))

    def is_terminal(self, state: State) -> bool:
        return state.t_rem <= 0 or in_goal_region(self.grid.position(state.cell), self.mission)

    def features(self, state: State) -> np.ndarray:
        q = self.grid.position(state.cell)
        span = np.where(self.grid.upper > self.grid.lower, self.grid.upper - self.grid.lower, 1.0)
        x = 2.0 * (q - self.grid.lower) / span - 1.0
        return np.append(x, state.t_rem / self.mission.N)

    def utility(self, u1: float, pf: float) -> float:
        lam = self.cfg.game.lam
        if self.cfg.reward.normalized_utility:
            return lam * u1 / self.u1_max - (1.0 - lam) * pf / self.pf_max
        return lam * u1 - (1.0 - lam) * pf

    def step(self, state: State, action: int) -> StepOutcome:
        if self.is_terminal(state):
            raise EpisodeFinished("step called on a terminal state")
        a = self.actions[action]
        m, rw = self.mission, self.cfg.reward
        q = self.grid.position(state.cell)
        q_next = q + np.asarray(a.dq)
        rejected = bool(check_mobility(q, q_next, m))
        if not rejected:
            try:
                cell = self.grid.cell_of(q_next)
            except OffGrid:
                rejected = True
        if rejected:
            cell, q_next, pf = state.cell, q, flight_power((0.0, 0.0, 0.0), self.cfg.flight)
        else:
            pf = self._pf[action]
        t_rem = state.t_rem - 1
        u1, resp = self.cell_u1(cell)

        # time fractions use slots so desk (dt=5) and full (dt=1) scale alike
        r_main = rw.eta1 * (t_rem / m.N) * self.utility(u1, pf)
        p_dist = -rw.eta2 * (1.0 + (m.N - t_rem) / m.N) * float(np.linalg.norm(q_next - np.asarray(m.q_f))) / self._d0 + 0.0
        bonus = rw.p_fail if rejected else 0.0
        if in_goal_region(q_next, m):
            bonus += rw.r_goal
            reason = "goal"
        elif t_rem <= 0:
            bonus += rw.p_fail
            reason = "timeout"
        else:
            reason = "none"
        br = Breakdown(r_main, p_dist, bonus)
        return StepOutcome(State(cell, t_rem), br.total, br, reason != "none", reason, rejected, u1, pf, resp)

    # ------------------------------------------------------------ exporting
    def rollout(self, policy: Callable[[State], int], max_steps: int | None = None):
        """Run ``policy`` from reset; returns the list of (state, action, outcome)."""
        s = self.reset()
        out = []
        limit = self.mission.N if max_steps is None else max_steps
        while not self.is_terminal(s) and len(out) < limit:
            a = policy(s)
            o = self.step(s, a)
            out.append((s, a, o))
            s = o.next
        return out


def trajectory_csv(env: LeaderEnv, steps) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    q0 = env.grid.position(env.reset().cell)
    w.writerow([0, *(repr(float(x)) for x in q0), "", "", "", "", "", ""])
    for i, (_, a, o) in enumerate(steps, start=1):
        q = env.grid.position(o.next.cell)
        w.writerow([i, *(repr(float(x)) for x in q), a, repr(o.reward), repr(o.breakdown.r_main),
                    repr(o.breakdown.p_dist), repr(o.u1), repr(o.flight_power)])
    return buf.getvalue()
