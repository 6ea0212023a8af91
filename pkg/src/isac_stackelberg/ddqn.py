"""Double deep Q-learning for the leader, in plain numpy.

The Q-network is a small ReLU perceptron with hand-written backpropagation;
Adam with global-norm clipping trains it from a uniform replay buffer, and a
soft-updated target network evaluates the online network's greedy choice.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import AgentConfig
from .leader_env import N_ACTIONS, LeaderEnv, State

CHECKPOINT_VERSION = 1
N_FEATURES = 4
STATS_COLUMNS = ("episode", "return", "discounted_return", "steps", "reached_goal",
                 "epsilon", "mean_u2", "sum_u1", "sum_pf", "loss")


@dataclass
class MlpParams:
    weights: list[np.ndarray]   # weights[i] has shape (n_in, n_out)
    biases: list[np.ndarray]

    @classmethod
    def init(cls, sizes, stream: np.random.Generator) -> "MlpParams":
        """He-uniform weights, zero biases."""
        ws, bs = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            lim = math.sqrt(6.0 / n_in)
            ws.append(stream.uniform(-lim, lim, size=(n_in, n_out)))
            bs.append(np.zeros(n_out))
        return cls(ws, bs)

    @classmethod
    def zeros_like(cls, other: "MlpParams") -> "MlpParams":
        return cls([np.zeros_like(w) for w in other.weights], [np.zeros_like(b) for b in other.biases])

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, x: np.ndarray) -> "MlpParams":
        out, i = [], 0
        for a in self.arrays():
            out.append(np.asarray(x[i:i + a.size], dtype=float).reshape(a.shape))
            i += a.size
        n = len(self.weights)
        return MlpParams(out[:n], out[n:])

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    def to_json(self) -> dict:
        return {"weights": [w.tolist() for w in self.weights], "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_json(cls, d: dict) -> "MlpParams":
        return cls([np.asarray(w, float) for w in d["weights"]], [np.asarray(b, float) for b in d["biases"]])


def default_params(cfg: AgentConfig, stream: np.random.Generator) -> MlpParams:
    return MlpParams.init((N_FEATURES, *cfg.hidden, N_ACTIONS), stream)


def _forward(params: MlpParams, X: np.ndarray):
    acts = [X]
    h = X
    n = len(params.weights)
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        h = np.maximum(z, 0.0) if i < n - 1 else z
        acts.append(h)
    return h, acts


def forward(params: MlpParams, features: np.ndarray) -> np.ndarray:
    """Q-values for one feature vector (shape 18) or a batch (shape (B, 18))."""
    X = np.asarray(features, dtype=float)
    q, _ = _forward(params, np.atleast_2d(X))
    return q[0] if X.ndim == 1 else q


@dataclass
class Batch:
    s: np.ndarray       # (B, 4)
    a: np.ndarray       # (B,)
    r: np.ndarray       # (B,)
    s2: np.ndarray      # (B, 4)
    done: np.ndarray    # (B,) bool


def td_targets(batch: Batch, online: MlpParams, target: MlpParams, gamma: float) -> np.ndarray:
    """Double-Q targets; terminal samples do not bootstrap."""
    if len(batch.r) == 0:
        raise ValueError("empty batch")
    a_star = np.argmax(forward(online, batch.s2), axis=1)
    q_next = forward(target, batch.s2)[np.arange(len(a_star)), a_star]
    return batch.r + gamma * np.where(batch.done, 0.0, q_next)


def loss_and_gradients(params: MlpParams, s: np.ndarray, a: np.ndarray, y: np.ndarray):
    """Mean squared TD error on the taken actions and its exact gradient."""
    X = np.atleast_2d(np.asarray(s, dtype=float))
    a = np.asarray(a, dtype=int)
    B = X.shape[0]
    q, acts = _forward(params, X)
    err = q[np.arange(B), a] - y
    loss = float(np.mean(err ** 2))

    delta = np.zeros_like(q)
    delta[np.arange(B), a] = 2.0 * err / B
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i].T) * (acts[i] > 0)
    return loss, MlpParams(gw, gb)


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    t: int = 0

    @classmethod
    def init(cls, params: MlpParams) -> "AdamState":
        return cls(MlpParams.zeros_like(params), MlpParams.zeros_like(params), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t)


def clip_by_global_norm(grads: MlpParams, max_norm: float) -> MlpParams:
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.arrays())))
    if norm <= max_norm or norm == 0.0:
        return grads
    f = max_norm / norm
    return MlpParams([w * f for w in grads.weights], [b * f for b in grads.biases])


def optimizer_step(params: MlpParams, grads: MlpParams, state: AdamState, cfg: AgentConfig,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Clip, then one Adam update.  Returns ``(params, state)`` without mutating inputs."""
    g = clip_by_global_norm(grads, cfg.grad_clip)
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, gi, m, v in zip(params.arrays(), g.arrays(), state.m.arrays(), state.v.arrays()):
        m = beta1 * m + (1.0 - beta1) * gi
        v = beta2 * v + (1.0 - beta2) * gi * gi
        mh = m / (1.0 - beta1 ** t)
        vh = v / (1.0 - beta2 ** t)
        new_p.append(p - cfg.lr * mh / (np.sqrt(vh) + eps))
        new_m.append(m)
        new_v.append(v)
    n = len(params.weights)
    return (MlpParams(new_p[:n], new_p[n:]),
            AdamState(MlpParams(new_m[:n], new_m[n:]), MlpParams(new_v[:n], new_v[n:]), t))


def select_action(q: np.ndarray, epsilon: float, stream: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0.0 and stream.random() < epsilon:
        return int(stream.integers(len(q)))
    return int(np.argmax(q))  # first maximum, i.e. lowest id on ties


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    return MlpParams([tau * w + (1.0 - tau) * wt for w, wt in zip(online.weights, target.weights)],
                     [tau * b + (1.0 - tau) * bt for b, bt in zip(online.biases, target.biases)])


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions."""

    def __init__(self, capacity: int, dim: int = N_FEATURES):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, dim))
        self.a = np.zeros(capacity, dtype=int)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, dim))
        self.done = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, s, a: int, r: float, s2, done: bool) -> None:
        if not (0 <= a < N_ACTIONS) or not np.isfinite(r):
            raise ValueError("invalid transition")
        i = self._next
        self.s[i], self.a[i], self.r[i], self.s2[i], self.done[i] = s, a, r, s2, done
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def oldest(self) -> int:
        return self._next if self._size == self.capacity else 0

    def sample(self, n: int, stream: np.random.Generator) -> Batch:
        if n > self._size:
            raise ValueError(f"cannot draw {n} from {self._size} transitions")
        idx = stream.choice(self._size, size=n, replace=False)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx])


@dataclass
class EpisodeStats:
    episode: int
    ret: float
    discounted_return: float
    steps: int
    reached_goal: bool
    epsilon: float
    mean_u2: float
    sum_u1: float
    sum_pf: float
    loss: float

    def row(self) -> list:
        return [self.episode, repr(self.ret), repr(self.discounted_return), self.steps, int(self.reached_goal),
                repr(self.epsilon), repr(self.mean_u2), repr(self.sum_u1), repr(self.sum_pf), repr(self.loss)]


@dataclass
class Agent:
    online: MlpParams
    target: MlpParams
    opt: AdamState
    epsilon: float
    learn_steps: int = 0

    @classmethod
    def create(cls, cfg: AgentConfig, stream: np.random.Generator) -> "Agent":
        p = default_params(cfg, stream)
        return cls(p, p.copy(), AdamState.init(p), cfg.eps_init)

    def learn(self, batch: Batch, cfg: AgentConfig) -> float:
        y = td_targets(batch, self.online, self.target, cfg.gamma)
        loss, g = loss_and_gradients(self.online, batch.s, batch.a, y)
        self.online, self.opt = optimizer_step(self.online, g, self.opt, cfg)
        self.learn_steps += 1
        if self.learn_steps % cfg.f_update == 0:
            self.target = soft_update(self.target, self.online, cfg.tau)
        self.epsilon = max(cfg.eps_min, self.epsilon * (1.0 - cfg.eps_decay))
        return loss


@dataclass
class TrainResult:
    agent: Agent
    stats: list[EpisodeStats] = field(default_factory=list)

    @property
    def params(self) -> MlpParams:
        return self.agent.online

    def goal_rate(self, last: int = 50) -> float:
        tail = self.stats[-last:]
        return sum(s.reached_goal for s in tail) / max(len(tail), 1)

    def mean_u2(self, last: int = 50) -> float:
        tail = self.stats[-last:]
        return float(np.mean([s.mean_u2 for s in tail])) if tail else math.nan


def _u2(env: LeaderEnv, o) -> float:
    return env.utility(o.u1, o.flight_power)


def train(env: LeaderEnv, cfg: AgentConfig, stream: np.random.Generator,
          episodes: int | None = None, agent: Agent | None = None) -> TrainResult:
    """Epsilon-greedy episodes with one mini-batch update per environment step."""
    agent = agent or Agent.create(cfg, stream)
    buf = ReplayBuffer(cfg.buffer_capacity)
    res = TrainResult(agent)
    for ep in range(cfg.ep_max if episodes is None else episodes):
        s = env.reset()
        x = env.features(s)
        ret = disc = 0.0
        u2s, su1, spf, losses = [], 0.0, 0.0, []
        steps, goal = 0, False
        while not env.is_terminal(s):
            a = select_action(forward(agent.online, x), agent.epsilon, stream)
            o = env.step(s, a)
            x2 = env.features(o.next)
            buf.add(x, a, o.reward, x2, o.done)
            disc += cfg.gamma ** steps * o.reward
            ret += o.reward
            u2s.append(_u2(env, o))
            su1 += o.u1
            spf += o.flight_power
            steps += 1
            if len(buf) >= max(cfg.batch, cfg.learning_starts):
                losses.append(agent.learn(buf.sample(cfg.batch, stream), cfg))
            goal = o.done_reason == "goal"
            s, x = o.next, x2
        res.stats.append(EpisodeStats(ep, ret, disc, steps, goal, agent.epsilon, float(np.mean(u2s)),
                                      su1, spf, float(np.mean(losses)) if losses else math.nan))
    return res


def greedy_policy(params: MlpParams, env: LeaderEnv):
    return lambda s: int(np.argmax(forward(params, env.features(s))))


def greedy_rollout(params: MlpParams, env: LeaderEnv, gamma: float,
                   max_steps: int | None = None):
    """Epsilon-free rollout from reset; returns ``(steps, discounted return)``."""
    steps = env.rollout(greedy_policy(params, env), max_steps)
    G = sum(gamma ** k * o.reward for k, (_, _, o) in enumerate(steps))
    return steps, float(G)


def stats_csv(stats: list[EpisodeStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_COLUMNS)
    for s in stats:
        w.writerow(s.row())
    return buf.getvalue()


def save_checkpoint(agent: Agent, path: str | Path) -> None:
    d = {
        "version": CHECKPOINT_VERSION,
        "online": agent.online.to_json(),
        "target": agent.target.to_json(),
        "adam": {"m": agent.opt.m.to_json(), "v": agent.opt.v.to_json(), "t": agent.opt.t},
        "epsilon": agent.epsilon,
        "learn_steps": agent.learn_steps,
    }
    Path(path).write_text(json.dumps(d))


def load_checkpoint(path: str | Path) -> Agent:
    d = json.loads(Path(path).read_text())
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
    opt = AdamState(MlpParams.from_json(d["adam"]["m"]), MlpParams.from_json(d["adam"]["v"]), int(d["adam"]["t"]))
    return Agent(MlpParams.from_json(d["online"]), MlpParams.from_json(d["target"]), opt,
                 float(d["epsilon"]), int(d["learn_steps"]))
