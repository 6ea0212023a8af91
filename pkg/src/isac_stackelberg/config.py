"""Scenario definition, parameter defaults, validation and random streams.

Two profiles are provided. ``full`` carries the reference-scale parameters
(25-element arrays, K=10, L=5, 100 slots, 1000 episodes); ``desk`` is a
reduced instance small enough for CI.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
SEED_ENV_VAR = "ISAC_SEED"
SPEED_OF_LIGHT = 3.0e8

Vec3 = tuple[float, float, float]


class ValidationError(ValueError):
    """Raised when a scenario violates one or more invariants.

    ``problems`` holds the dotted field paths that failed.
    """

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid scenario: " + ", ".join(self.problems))


@dataclass(frozen=True)
class MissionConfig:
    q_i: Vec3
    q_f: Vec3
    r_f: float
    z_min: float
    z_max: float
    v_max: Vec3
    dt: float
    T: float
    N: int
    grid_lower: Vec3
    grid_upper: Vec3
    grid_shape: tuple[int, int, int]
    obstacles: tuple[Vec3, ...] = ()
    d_min: float = 8.0

    @property
    def grid_step(self) -> np.ndarray:
        lo, hi = np.asarray(self.grid_lower), np.asarray(self.grid_upper)
        n = np.asarray(self.grid_shape)
        return np.where(n > 1, (hi - lo) / np.maximum(n - 1, 1), 0.0)


@dataclass(frozen=True)
class UserLayout:
    dl_users: tuple[Vec3, ...]
    ul_users: tuple[Vec3, ...]
    bs: Vec3 = (0.0, 0.0, 0.0)

    @property
    def K(self) -> int:
        return len(self.dl_users)

    @property
    def L(self) -> int:
        return len(self.ul_users)


@dataclass(frozen=True)
class ArrayGeometry:
    tx: tuple[int, int]
    rx: tuple[int, int]
    spacing: float
    wavelength: float

    @property
    def M_t(self) -> int:
        return self.tx[0] * self.tx[1]

    @property
    def M_r(self) -> int:
        return self.rx[0] * self.rx[1]


@dataclass(frozen=True)
class ClutterConfig:
    # (elevation offset, azimuth offset) in degrees relative to the target direction
    offsets_deg: tuple[tuple[float, float], ...] = ((0.0, 30.0), (0.0, -30.0))
    cnr_db: float = 10.0


@dataclass(frozen=True)
class ChannelConfig:
    f_c: float = 10e9
    alpha: float = 3.0
    varsigma: float = 0.1
    beta0_db: float = 110.0
    kappa: float = 10.0
    E1: float = 9.61
    E2: float = 0.16
    g_rcs: float = 1e-8
    clutter: ClutterConfig = ClutterConfig()

    @property
    def beta0(self) -> float:
        return 10.0 ** (self.beta0_db / 10.0)


@dataclass(frozen=True)
class NoiseConfig:
    sigma2_dl: float = 1.0
    sigma2_e: float = 1.0
    sigma2_a: float = 1.0
    sigma2_si: float = 1.0


@dataclass(frozen=True)
class SensingConfig:
    bandwidth: float = 30e6
    gamma_shape_sq: float = math.pi ** 2 / 3.0


@dataclass(frozen=True)
class Thresholds:
    rho_ul: float = 0.1
    rho_dl: float = 0.5
    rho_est: float = 1e-3


@dataclass(frozen=True)
class FlightPowerParams:
    P0: float = 79.86
    P1: float = 88.63
    nu0: float = 4.03
    U_tip: float = 120.0
    C0: float = 0.0092
    G0: float = 29.4


@dataclass(frozen=True)
class RewardConfig:
    eta1: float = 10.0
    eta2: float = 2.0
    r_goal: float = 100.0
    p_fail: float = -10.0
    # use max-normalised U2 inside r_main so watts of flight power and
    # noise-normalised network power share a scale
    normalized_utility: bool = True


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    lr: float = 1e-3
    grad_clip: float = 1.0
    batch: int = 64
    eps_init: float = 1.0
    eps_decay: float = 1e-3
    eps_min: float = 0.01
    tau: float = 0.01
    f_update: int = 5
    ep_max: int = 1000
    buffer_capacity: int = 10000
    # transitions collected under the initial epsilon before updates begin
    learning_starts: int = 64
    hidden: tuple[int, int] = (16, 8)


@dataclass(frozen=True)
class GameConfig:
    lam: float = 0.5
    channel_mode: str = "expected"
    u1_max: float | None = None
    pf_max: float | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    mission: MissionConfig
    users: UserLayout
    arrays: ArrayGeometry
    channel: ChannelConfig = ChannelConfig()
    noise: NoiseConfig = NoiseConfig()
    sensing: SensingConfig = SensingConfig()
    thresholds: Thresholds = Thresholds()
    flight: FlightPowerParams = FlightPowerParams()
    reward: RewardConfig = RewardConfig()
    agent: AgentConfig = AgentConfig()
    game: GameConfig = GameConfig()
    seed: int = 0
    profile: str = "custom"

    def replace(self, **changes: Any) -> "ScenarioConfig":
        """Return a copy with nested fields replaced.

        Keys may be dotted paths, e.g. ``replace(**{"game.lam": 1.0})``.
        """
        cfg = self
        for path, value in changes.items():
            cfg = _replace_path(cfg, path.split("."), value)
        return cfg


def _replace_path(obj, parts, value):
    if len(parts) == 1:
        return dataclasses.replace(obj, **{parts[0]: value})
    child = getattr(obj, parts[0])
    return dataclasses.replace(obj, **{parts[0]: _replace_path(child, parts[1:], value)})


def _ring(n: int, radius: float, phase_deg: float) -> tuple[Vec3, ...]:
    out = []
    for i in range(n):
        a = math.radians(phase_deg + 360.0 * i / n)
        out.append((round(radius * math.cos(a), 6), round(radius * math.sin(a), 6), 0.0))
    return tuple(out)


def default_scenario(profile: str = "desk") -> ScenarioConfig:
    """Build the ``full`` (reference scale) or ``desk`` (CI-sized) scenario."""
    wavelength = SPEED_OF_LIGHT / 10e9
    if profile == "full":
        mission = MissionConfig(
            q_i=(-95.0, 95.0, 50.0), q_f=(95.0, -95.0, 50.0), r_f=30.0,
            z_min=20.0, z_max=100.0, v_max=(20.0, 20.0, 10.0),
            dt=1.0, T=100.0, N=100,
            grid_lower=(-100.0, -100.0, 20.0), grid_upper=(100.0, 100.0, 100.0),
            grid_shape=(21, 21, 17),
            obstacles=((-30.0, 30.0, 50.0), (30.0, -30.0, 50.0)), d_min=8.0,
        )
        users = UserLayout(dl_users=_ring(10, 60.0, 10.0), ul_users=_ring(5, 40.0, 45.0))
        arrays = ArrayGeometry(tx=(5, 5), rx=(5, 5), spacing=wavelength / 2, wavelength=wavelength)
        agent = AgentConfig(ep_max=1000)
    elif profile == "desk":
        mission = MissionConfig(
            q_i=(-100.0, 100.0, 40.0), q_f=(100.0, -100.0, 40.0), r_f=60.0,
            z_min=20.0, z_max=100.0, v_max=(20.0, 20.0, 8.0),
            dt=5.0, T=50.0, N=10,
            grid_lower=(-100.0, -100.0, 40.0), grid_upper=(100.0, 100.0, 60.0),
            grid_shape=(5, 5, 2),
            obstacles=((-50.0, 50.0, 40.0), (50.0, -50.0, 40.0)), d_min=8.0,
        )
        users = UserLayout(
            dl_users=((60.0, 20.0, 0.0), (-30.0, -60.0, 0.0)),
            ul_users=((20.0, -70.0, 0.0), (-60.0, 30.0, 0.0)),
        )
        arrays = ArrayGeometry(tx=(2, 2), rx=(2, 2), spacing=wavelength / 2, wavelength=wavelength)
        agent = AgentConfig(ep_max=300, buffer_capacity=5000)
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return ScenarioConfig(mission=mission, users=users, arrays=arrays, agent=agent, profile=profile)


def _finite(v) -> bool:
    return bool(np.all(np.isfinite(np.asarray(v, dtype=float))))


def validate(cfg: ScenarioConfig) -> None:
    """Raise :class:`ValidationError` naming every violated invariant."""
    bad: list[str] = []
    m, u, g = cfg.mission, cfg.users, cfg.game

    if u.K < 1:
        bad.append("users.K")
    if u.L < 1:
        bad.append("users.L")
    for name, pts in (("users.dl_users", u.dl_users), ("users.ul_users", u.ul_users), ("users.bs", [u.bs])):
        if not all(len(p) == 3 and _finite(p) for p in pts):
            bad.append(name)
    if not 0.0 <= g.lam <= 1.0:
        bad.append("game.λ")
    if g.channel_mode not in ("expected", "sampled"):
        bad.append("game.channel_mode")
    for name in ("u1_max", "pf_max"):
        v = getattr(g, name)
        if v is not None and not v > 0:
            bad.append(f"game.{name}")

    t = cfg.thresholds
    if not t.rho_ul >= 0:
        bad.append("thresholds.rho_ul")
    if not t.rho_dl >= 0:
        bad.append("thresholds.rho_dl")
    if not t.rho_est > 0:
        bad.append("thresholds.rho_est")

    if m.N * m.dt > m.T + 1e-9:
        bad.append("mission.C1")
    if m.N < 1 or m.dt <= 0:
        bad.append("mission.N")
    if not m.z_min < m.z_max:
        bad.append("mission.z_range")
    lo, hi = np.asarray(m.grid_lower, float), np.asarray(m.grid_upper, float)
    if not (_finite(lo) and _finite(hi) and np.all(lo <= hi)):
        bad.append("mission.grid")
    if any(n < 1 for n in m.grid_shape) or any(
        n == 1 and a != b for n, a, b in zip(m.grid_shape, lo, hi)
    ) or any(n > 1 and not a < b for n, a, b in zip(m.grid_shape, lo, hi)):
        bad.append("mission.grid_shape")
    for name in ("q_i", "q_f"):
        q = np.asarray(getattr(m, name), float)
        if not _finite(q) or np.any(q < lo - 1e-9) or np.any(q > hi + 1e-9):
            bad.append(f"mission.{name}")
    if not m.r_f > 0:
        bad.append("mission.r_f")
    if any(v <= 0 for v in m.v_max):
        bad.append("mission.v_max")
    if m.d_min < 0 or not all(len(o) == 3 and _finite(o) for o in m.obstacles):
        bad.append("mission.obstacles")

    f = cfg.flight
    for name in ("P0", "P1", "nu0", "U_tip", "C0", "G0"):
        if not getattr(f, name) > 0:
            bad.append(f"flight.{name}")

    r = cfg.reward
    if r.eta1 < 0:
        bad.append("reward.eta1")
    if r.eta2 < 0:
        bad.append("reward.eta2")
    if not r.p_fail <= 0 <= r.r_goal:
        bad.append("reward.p_fail")

    a = cfg.arrays
    if min(a.tx + a.rx) < 1:
        bad.append("arrays.counts")
    if not (a.spacing > 0 and a.wavelength > 0):
        bad.append("arrays.spacing")

    c = cfg.channel
    if not c.alpha > 0:
        bad.append("channel.alpha")
    if not 0 < c.varsigma < 1:
        bad.append("channel.varsigma")
    if not c.kappa >= 0:
        bad.append("channel.kappa")
    if c.g_rcs < 0:
        bad.append("channel.g_rcs")

    n = cfg.noise
    for name in ("sigma2_dl", "sigma2_e", "sigma2_a"):
        if not getattr(n, name) > 0:
            bad.append(f"noise.{name}")
    if n.sigma2_si < 0:
        bad.append("noise.sigma2_si")
    if not (cfg.sensing.bandwidth > 0 and cfg.sensing.gamma_shape_sq > 0):
        bad.append("sensing")

    ag = cfg.agent
    if not 0 <= ag.gamma < 1:
        bad.append("agent.gamma")
    if not 0 < ag.tau <= 1:
        bad.append("agent.tau")
    if not 0 <= ag.eps_min <= ag.eps_init <= 1:
        bad.append("agent.eps")
    if ag.batch < 1 or ag.buffer_capacity < ag.batch or ag.f_update < 1 or ag.ep_max < 0:
        bad.append("agent.sizes")
    if bad:
        raise ValidationError(bad)


# ---------------------------------------------------------------- streams

def derive_stream(seed: int, label: str) -> np.random.Generator:
    """Deterministic generator keyed by ``(seed, label)``.

    Different labels give statistically independent streams for the same seed.
    """
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    key = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    ss = np.random.SeedSequence(entropy=int(seed) & (2 ** 64 - 1), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def effective_seed(cfg: ScenarioConfig) -> int:
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env not in (None, "") else cfg.seed


# ---------------------------------------------------------------- files

_NESTED = {
    "mission": MissionConfig, "users": UserLayout, "arrays": ArrayGeometry,
    "channel": ChannelConfig, "noise": NoiseConfig, "sensing": SensingConfig,
    "thresholds": Thresholds, "flight": FlightPowerParams, "reward": RewardConfig,
    "agent": AgentConfig, "game": GameConfig,
}


def to_dict(cfg: ScenarioConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d = _drop_none(_tuples_to_lists(d))
    return {"schema_version": SCHEMA_VERSION, **d}


def _tuples_to_lists(x):
    if isinstance(x, dict):
        return {k: _tuples_to_lists(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_tuples_to_lists(v) for v in x]
    return x


def _drop_none(x):
    # TOML has no null; absent keys mean "auto"
    if isinstance(x, dict):
        return {k: _drop_none(v) for k, v in x.items() if v is not None}
    return x


def _to_tuples(x):
    if isinstance(x, list):
        return tuple(_to_tuples(v) for v in x)
    return x


def _build(cls, data: dict, path: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ValidationError([f"{path}.{k}" if path else k for k in unknown])
    kwargs = {}
    for k, v in data.items():
        if k == "clutter" and cls is ChannelConfig:
            kwargs[k] = _build(ClutterConfig, v, f"{path}.clutter")
        elif isinstance(v, list):
            kwargs[k] = _to_tuples(v)
        else:
            kwargs[k] = v
    return cls(**kwargs)


def from_dict(data: dict) -> ScenarioConfig:
    data = dict(data)
    version = data.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ValidationError(["schema_version"])
    top = {}
    for k, v in data.items():
        if k in _NESTED:
            top[k] = _build(_NESTED[k], v, k)
        elif k in ("seed", "profile"):
            top[k] = v
        else:
            raise ValidationError([k])
    missing = [k for k in ("mission", "users", "arrays") if k not in top]
    if missing:
        raise ValidationError(missing)
    return ScenarioConfig(**top)


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Parse a ``.toml`` or ``.json`` scenario file and validate it."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        data = tomllib.loads(path.read_text())
    else:
        data = json.loads(path.read_text())
    cfg = from_dict(data)
    validate(cfg)
    return cfg


def dumps(cfg: ScenarioConfig, fmt: str = "toml") -> str:
    d = to_dict(cfg)
    if fmt == "json":
        return json.dumps(d, indent=2, sort_keys=True)
    import tomli_w
    return tomli_w.dumps(d)


def save_scenario(cfg: ScenarioConfig, path: str | Path) -> None:
    path = Path(path)
    path.write_text(dumps(cfg, "toml" if path.suffix.lower() == ".toml" else "json"))


def digest(cfg: ScenarioConfig) -> str:
    """SHA-256 of the canonical JSON form; independent of key order."""
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
