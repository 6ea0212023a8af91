"""Follower (R-BS) resource allocation by successive convex approximation.

Each subproblem is a conic program over the Hermitian covariances ``V_k``
and ``W``, the UL powers ``p`` and the slacks ``mu, omega, t, s, iota``.
Local points are re-seeded from every new primal at their tight values,
which keeps the previous iterate feasible and the objective nonincreasing.

Internally every link gain is multiplied by a power unit ``c`` so that the
conic variables are O(1); reported solutions are in watts.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .channel import NetworkChannels
from .config import ScenarioConfig
from .metrics import (FollowerSolution, crlb_range, crlb_threshold_trace, dl_sinr, eve_sinrs,
                      optimal_receive_beamformer, psi_matrix, secrecy_rates, transmit_covariance,
                      ul_sinr_optimal, ZeroIllumination)

LN2 = math.log(2.0)


class InfeasibleScenario(RuntimeError):
    pass


class SolverFailure(RuntimeError):
    pass


class RankOneViolation(RuntimeError):
    def __init__(self, k: int, ratio: float):
        super().__init__(f"V_{k} is not rank one (lambda2/lambda1 = {ratio:.3g})")
        self.k = k
        self.ratio = ratio


@dataclass(frozen=True)
class ScaSettings:
    eps: float = 1e-3
    max_iters: int = 30
    rank_tol: float = 1e-4
    elastic_tol: float = 1e-7
    phase1_iters: int = 60
    phase1_reg: float = 1e-6
    phase1_p_floor: float = 0.0
    phase1_margin: float = 1e-2
    solver_tol: float = 1e-8
    solver_max_iter: int = 200

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class LocalPoint:
    mu: np.ndarray       # K+1
    omega: np.ndarray    # 2L
    t: np.ndarray        # K+1
    s: np.ndarray        # L
    iota: np.ndarray     # L
    p_tilde: np.ndarray  # L
    Psi: np.ndarray      # (L, M_r, M_r)
    V: np.ndarray
    W: np.ndarray
    p: np.ndarray

    def check(self) -> None:
        for name in ("mu", "omega", "t", "s", "iota", "p_tilde"):
            v = getattr(self, name)
            if v.size and not np.all(v > 0):
                raise ValueError(f"local {name} must be strictly positive")


@dataclass
class ScaTrace:
    u1: list[float] = field(default_factory=list)
    f_err: list[float] = field(default_factory=list)
    residual: list[float] = field(default_factory=list)
    elastic: list[float] = field(default_factory=list)
    # worst lambda2/lambda1 over V_k as returned by the solver, before any rank map
    raw_rank: list[float] = field(default_factory=list)
    status: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "u1", "f_err", "max_residual"])
        for i, (u, f, r) in enumerate(zip(self.u1, self.f_err, self.residual), start=1):
            w.writerow([i, repr(float(u)), repr(float(f)), repr(float(r))])
        return buf.getvalue()


@dataclass
class CheckItem:
    name: str
    passed: bool
    margin: float


@dataclass
class VerificationReport:
    items: list[CheckItem]

    @property
    def passed(self) -> bool:
        return all(i.passed for i in self.items)

    def failures(self) -> list[str]:
        return [i.name for i in self.items if not i.passed]

    def max_violation(self) -> float:
        return max([max(0.0, -i.margin) for i in self.items] + [0.0])


# ------------------------------------------------------------------ helpers

def f1_bound(t, mu, t_lo, mu_lo):
    """First-order lower bound of ``t^2 / mu`` around ``(t_lo, mu_lo)``."""
    return (t_lo / mu_lo ** 2) * (2.0 * mu_lo * t - t_lo * mu)


def log2_upper(mu, mu_lo):
    """Tangent of the concave ``log2(1 + mu)`` at ``mu_lo``; a global upper bound."""
    return math.log2(1.0 + mu_lo) + (mu - mu_lo) / (LN2 * (1.0 + mu_lo))


def matrix_fractional_lower(h: np.ndarray, Psi: np.ndarray, Psi_lo: np.ndarray) -> float:
    """Affine-in-``Psi`` lower bound of ``h^H Psi^-1 h``, tight at ``Psi_lo``."""
    g = np.linalg.solve(Psi_lo, h)
    return float(2.0 * np.real(np.vdot(h, g)) - np.real(g.conj() @ Psi @ g))


def inv_sqrt_hermitian(S: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    w, Q = np.linalg.eigh(0.5 * (S + S.conj().T))
    w = np.maximum(w, floor)
    return (Q / np.sqrt(w)) @ Q.conj().T


def power_unit(ch: NetworkChannels) -> float:
    g = np.sum(np.abs(ch.h_ak) ** 2, axis=1)
    ref = float(np.mean(g)) if g.size else float(np.sum(np.abs(ch.h_la) ** 2) / max(ch.L, 1))
    return 1.0 / ref if ref > 0 else 1.0


def scale_channels(ch: NetworkChannels, c: float) -> NetworkChannels:
    r = math.sqrt(c)
    return ch.replace(h_ak=ch.h_ak * r, h_la=ch.h_la * r, h_le=ch.h_le * r, h_lk=ch.h_lk * r,
                      h_ae=ch.h_ae * r, zeta0_sq=ch.zeta0_sq * c)


def _sensing_matrix(ch: NetworkChannels) -> np.ndarray:
    """G with tr(Y S Y^H) = Re tr(G S), Y = |zeta0| Sigma_n^-1/2 A0."""
    Y = math.sqrt(ch.zeta0_sq) * inv_sqrt_hermitian(ch.Sigma_n) @ ch.A0
    G = Y.conj().T @ Y
    return 0.5 * (G + G.conj().T)


def tight_local_point(ch: NetworkChannels, V, W, p, floor: float = 1e-10) -> LocalPoint:
    """Slacks at the values where every surrogate is tight for primal (V, W, p)."""
    sol = FollowerSolution(V=V, W=W, p=p)
    K, L = ch.K, ch.L
    S = transmit_covariance(sol)
    g_dl = np.array([dl_sinr(k, ch, sol) for k in range(K)])
    g_eu, g_ed = eve_sinrs(ch, sol)
    sig = np.array([np.real(ch.h_ak[k].conj() @ V[k] @ ch.h_ak[k]) for k in range(K)])
    p_tilde = p * np.abs(ch.h_le) ** 2
    rx = p_tilde.sum()
    d_e = rx + float(np.real(ch.h_ae.conj() @ W @ ch.h_ae)) + ch.sigma2_e
    jam = float(np.real(ch.h_ae.conj() @ S @ ch.h_ae))
    D = np.array([rx - p_tilde[l] + jam + ch.sigma2_e for l in range(L)])
    Psi = np.array([psi_matrix(l, ch, p, S) for l in range(L)]) if L else np.zeros((0, ch.M_r, ch.M_r))
    g_ul = np.array([ul_sinr_optimal(l, ch, sol) for l in range(L)])
    mu = np.maximum(np.append(g_dl, g_ed), floor)
    t = np.sqrt(np.maximum(np.append(sig, mu[-1] * d_e), floor ** 2))
    omega = np.maximum(np.concatenate([g_ul, g_eu]), floor)
    return LocalPoint(mu=mu, omega=omega, t=t, s=np.sqrt(np.maximum(D, floor ** 2)),
                      iota=np.sqrt(omega[:L]), p_tilde=np.maximum(p_tilde, floor), Psi=Psi,
                      V=V, W=W, p=p)


# ------------------------------------------------------------------ subproblem

class _Layout:
    def __init__(self, prog: conic.ConicProgram, ch: NetworkChannels, with_an: bool, elastic: bool):
        K, L, m = ch.K, ch.L, ch.M_t
        self.emb = conic.hermitian_embed(m)
        self.V = [prog.add_variable(f"V{k}", self.emb.n_params, "hermitian") for k in range(K)]
        self.W = prog.add_variable("W", self.emb.n_params, "hermitian") if with_an else None
        self.p = prog.add_variable("p", L, "power")
        self.mu = prog.add_variable("mu", K + 1, "slack")
        self.omega = prog.add_variable("omega", 2 * L, "slack")
        self.t = prog.add_variable("t", K + 1, "slack")
        self.s = prog.add_variable("s", L, "slack")
        self.iota = prog.add_variable("iota", L, "slack")
        self.e = prog.add_variable("e", 1, "elastic")[0] if elastic else None

    def tr(self, block, H) -> dict:
        """Re tr(H X) for the Hermitian block ``X``."""
        if block is None:
            return {}
        return _prune(dict(zip(block.tolist(), self.emb.trace_coeffs(H).tolist())))

    def hermitian(self, x, block) -> np.ndarray:
        if block is None:
            return None
        return self.emb.from_params(x[block])


def _prune(d: dict, rel: float = 1e-13) -> dict:
    """Drop round-off sized coefficients."""
    if not d:
        return d
    big = max(abs(v) for v in d.values())
    return {j: v for j, v in d.items() if abs(v) > rel * big}


def _add(*terms) -> dict:
    out: dict[int, float] = {}
    for scale, d in terms:
        for j, v in d.items():
            out[j] = out.get(j, 0.0) + scale * v
    return out


def build_subproblem(ch: NetworkChannels, lo: LocalPoint, cfg: ScenarioConfig, with_an: bool = True,
                     elastic: bool = False, margin: float = 0.0, crlb_scale: float | None = None,
                     reg: float = 1e-6, p_floor: float = 0.0) -> conic.ConicProgram:
    """Conic surrogate at ``lo``; channels are assumed already power-scaled.

    With ``elastic`` the rate and sensing requirements are relaxed by a
    single nonnegative ``e`` and the objective becomes ``e + reg * power``.
    ``p_floor`` bounds the UL powers away from zero, where the UL tangent
    constraints degenerate.
    """
    K, L = ch.K, ch.L
    prog = conic.ConicProgram()
    lay = _Layout(prog, ch, with_an, elastic)
    rho_dl = cfg.thresholds.rho_dl + margin * max(cfg.thresholds.rho_dl, 0.01)
    rho_ul = cfg.thresholds.rho_ul + margin * max(cfg.thresholds.rho_ul, 0.01)
    H_ak, H_ae = ch.H_ak, ch.H_ae
    eye = np.eye(ch.M_t)

    power = _add(*[(1.0, lay.tr(b, eye)) for b in lay.V], (1.0, lay.tr(lay.W, eye)),
                 (1.0, {j: 1.0 for j in lay.p.tolist()}))
    c = np.zeros(prog.n_vars)
    if elastic:
        c[lay.e] = 1.0
        for j, v in power.items():
            c[j] += reg * v
    else:
        for j, v in power.items():
            c[j] = v
    prog.set_objective(c)

    def nonneg(expr, const, name=""):
        expr = _prune(expr)
        scale = max([abs(v) for v in expr.values()] + [abs(const), 1e-300])
        prog.add_rows([{j: v / scale for j, v in expr.items()}], [const / scale], "nonnegative", name)

    def rsoc(a, b, z, a_lo, z_lo, name=""):
        # each of a, b, z is (dict, const).  The cone is invariant under
        # (k a, b / k, z) and positive scaling; both are chosen from the local
        # point so the three entries are of similar size there.
        k = z_lo / (math.sqrt(2.0) * a_lo) if a_lo > 0 and z_lo > 0 else 1.0
        n = 1.0 / z_lo if z_lo > 0 else 1.0
        rows, h = [], []
        for (d, c0), f in ((a, k * n), (b, n / k), (z, n)):
            rows.append({j: f * v for j, v in _prune(d).items()})
            h.append(f * c0)
        prog.add_rows(rows, h, "rotated_second_order", name)

    def expc(x, y, z, name=""):
        prog.add_rows([x[0], y[0], z[0]], [x[1], y[1], z[1]], "exponential", name)

    g_lk = np.abs(ch.h_lk) ** 2
    g_le = np.abs(ch.h_le) ** 2

    # (a) DL SINR surrogates
    for k in range(K):
        interf = _add(*[(g_lk[l, k], {lay.p[l]: 1.0}) for l in range(L)],
                      *[(1.0, lay.tr(lay.V[j], H_ak[k])) for j in range(K) if j != k],
                      (1.0, lay.tr(lay.W, H_ak[k])))
        a, m_ = lo.t[k], lo.mu[k]
        f1 = {lay.t[k]: 2.0 * a / m_, lay.mu[k]: -a * a / m_ ** 2}
        nonneg(_add((1.0, f1), (-1.0, interf)), -ch.sigma2_dl[k], f"dl_sinr_{k}")
        rsoc((lay.tr(lay.V[k], H_ak[k]), 0.0), ({}, 0.5), ({lay.t[k]: 1.0}, 0.0),
             lo.t[k] ** 2, lo.t[k], f"dl_signal_{k}")

    # (b) eavesdropper DL SINR
    d_e = _add(*[(g_le[l], {lay.p[l]: 1.0}) for l in range(L)], (1.0, lay.tr(lay.W, H_ae)))
    rsoc(({lay.mu[K]: 1.0}, 0.0), ({j: 0.5 * v for j, v in d_e.items()}, 0.5 * ch.sigma2_e),
         ({lay.t[K]: 1.0}, 0.0), lo.mu[K], lo.t[K], "eve_dl_den")
    tl = lo.t[K]
    leak = _add(*[(1.0, lay.tr(b, H_ae)) for b in lay.V])
    nonneg(_add((2.0 * tl, {lay.t[K]: 1.0}), (-1.0, leak)), -tl * tl, "eve_dl_num")

    # (c) DL secrecy rates
    mlo = lo.mu[K]
    for k in range(K):
        x = {lay.mu[K]: 1.0 / (1.0 + mlo)}
        x0 = LN2 * rho_dl + math.log1p(mlo) - mlo / (1.0 + mlo)
        if elastic:
            x[lay.e] = -LN2
        expc((x, x0), ({}, 1.0), ({lay.mu[k]: 1.0}, 1.0), f"dl_rate_{k}")

    # (d) eavesdropper UL SINRs
    for l in range(L):
        den = _add(*[(g_le[j], {lay.p[j]: 1.0}) for j in range(L) if j != l],
                   *[(1.0, lay.tr(b, H_ae)) for b in lay.V], (1.0, lay.tr(lay.W, H_ae)))
        rsoc((den, ch.sigma2_e), ({}, 0.5), ({lay.s[l]: 1.0}, 0.0), lo.s[l] ** 2, lo.s[l], f"eve_ul_den_{l}")
        a, m_ = lo.s[l], lo.p_tilde[l]
        half_f1 = {lay.s[l]: a / m_, lay.p[l]: -0.5 * a * a * g_le[l] / m_ ** 2}
        rsoc(({lay.omega[L + l]: 1.0}, 0.0), (half_f1, 0.0), ({}, 1.0), lo.omega[L + l], 1.0, f"eve_ul_num_{l}")

    # (e) UL secrecy rates
    for l in range(L):
        olo = lo.omega[L + l]
        x = {lay.omega[L + l]: 1.0 / (1.0 + olo)}
        x0 = LN2 * rho_ul + math.log1p(olo) - olo / (1.0 + olo)
        if elastic:
            x[lay.e] = -LN2
        expc((x, x0), ({}, 1.0), ({lay.omega[l]: 1.0}, 1.0), f"ul_rate_{l}")

    # (f) sensing: tr(Y S Y^H) >= C^2 / (8 gamma^2 B^2 rho_est), normalised
    G = _sensing_matrix(ch)
    need = crlb_threshold_trace(cfg.sensing, cfg.thresholds.rho_est) if crlb_scale is None else crlb_scale
    sens = _add(*[(1.0 / need, lay.tr(b, G)) for b in lay.V], (1.0 / need, lay.tr(lay.W, G)))
    if elastic:
        sens[lay.e] = 1.0
    nonneg(sens, -(1.0 + margin), "crlb")

    # (g) UL SINR with the closed-form receiver, via the matrix-fractional bound
    for l in range(L):
        h = ch.h_la[l]
        g = np.linalg.solve(lo.Psi[l], h)
        base = float(np.real(h.conj() @ g))
        a0g = ch.A0.conj().T @ g
        Hs = ch.zeta0_sq * np.outer(a0g, a0g.conj())
        quad = _add(*[(abs(np.vdot(ch.h_la[j], g)) ** 2, {lay.p[j]: 1.0}) for j in range(L) if j != l],
                    *[(1.0, lay.tr(b, Hs)) for b in lay.V], (1.0, lay.tr(lay.W, Hs)))
        const = 2.0 * base - float(np.real(g.conj() @ ch.Sigma_n @ g))
        rsoc(({lay.p[l]: 1.0}, 0.0), ({j: -0.5 * v for j, v in quad.items()}, 0.5 * const),
             ({lay.iota[l]: 1.0}, 0.0), lo.p[l], lo.iota[l], f"ul_sinr_{l}")
        il = lo.iota[l]
        nonneg({lay.iota[l]: 2.0 * il, lay.omega[l]: -1.0}, -il * il, f"ul_iota_{l}")

    # (h) cones on the primal variables
    E = lay.emb.svec_map
    for name, b in [(f"V{k}", lay.V[k]) for k in range(K)] + ([("W", lay.W)] if with_an else []):
        Gm = np.zeros((E.shape[0], prog.n_vars))
        Gm[:, b] = E
        prog.add_constraint(Gm, np.zeros(E.shape[0]), conic.ConeSpec("psd_triangle", E.shape[0]), f"psd_{name}")
    slack_idx = np.concatenate([lay.p, lay.mu, lay.omega, lay.t, lay.s, lay.iota]
                               + ([np.array([lay.e])] if elastic else []))
    Gn = np.zeros((slack_idx.size, prog.n_vars))
    Gn[np.arange(slack_idx.size), slack_idx] = 1.0
    h0 = np.zeros(slack_idx.size)
    h0[:L] = -p_floor
    prog.add_constraint(Gn, h0, conic.ConeSpec("nonnegative", slack_idx.size), "nonneg")
    prog.layout = lay
    return prog


def _primal(prog, x, ch):
    lay = prog.layout
    V = np.array([lay.hermitian(x, b) for b in lay.V]) if lay.V else np.zeros((0, ch.M_t, ch.M_t), complex)
    W = lay.hermitian(x, lay.W) if lay.W is not None else np.zeros((ch.M_t, ch.M_t), complex)
    p = np.maximum(x[lay.p], 0.0)
    e = float(x[lay.e]) if lay.e is not None else 0.0
    return V, W, p, e


def _eig_ratio(V: np.ndarray) -> float:
    w = np.linalg.eigvalsh(V)
    return float(max(w[-2], 0.0) / w[-1]) if len(w) > 1 and w[-1] > 0 else 0.0


def concentrate_rank_one(ch: NetworkChannels, V: np.ndarray, W: np.ndarray):
    """Move every V_k's component off its user's channel into W.

    ``V_k <- V_k h h^H V_k / (h^H V_k h)`` keeps the user's received power,
    the total covariance S and the total power unchanged; the eavesdropper
    only sees more jamming.  Any AN-enabled optimum thus maps to an equally
    good one with rank-one V_k.
    """
    V_new = []
    W = W.copy()
    for k, Vk in enumerate(V):
        g = Vk @ ch.h_ak[k]
        den = float(np.real(np.vdot(ch.h_ak[k], g)))
        Vr = np.outer(g, g.conj()) / den if den > 0 else np.zeros_like(Vk)
        W = W + (Vk - Vr)
        V_new.append(Vr)
    return np.array(V_new).reshape(V.shape), _project_psd(W)


def _project_psd(X: np.ndarray) -> np.ndarray:
    w, Q = np.linalg.eigh(0.5 * (X + X.conj().T))
    return (Q * np.maximum(w, 0.0)) @ Q.conj().T


# ------------------------------------------------------------------ algorithm

def _unscale(V, W, p, c) -> FollowerSolution:
    return FollowerSolution(V=V * c, W=W * c, p=p * c)


def initialize_local_point(ch: NetworkChannels, cfg: ScenarioConfig, settings: ScaSettings = ScaSettings(),
                           with_an: bool = True, trace: ScaTrace | None = None):
    """Seed a strictly feasible local point by an elastic phase-1 SCA.

    Returns ``(LocalPoint, FollowerSolution)`` in scaled and physical units
    respectively.  Raises :class:`InfeasibleScenario` when the elastic
    variable cannot be driven to zero.
    """
    c = power_unit(ch)
    sch = scale_channels(ch, c)
    K, L, m = ch.K, ch.L, ch.M_t
    V = np.array([np.outer(h, h.conj()) / np.vdot(h, h).real for h in sch.h_ak]) if K else np.zeros((0, m, m), complex)
    W = np.eye(m, dtype=complex) / m if with_an else np.zeros((m, m), complex)
    p = np.ones(L)
    lo = tight_local_point(sch, V, W, p)
    need = crlb_threshold_trace(cfg.sensing, cfg.thresholds.rho_est)

    # min e + reg * power; reg shrinks whenever e stalls above tolerance so a
    # feasible point is found without letting power run away
    reg = settings.phase1_reg
    e_hist: list[float] = []
    stall = 0
    for _ in range(settings.phase1_iters):
        prog = build_subproblem(sch, lo, cfg, with_an=with_an, elastic=True,
                                margin=settings.phase1_margin, crlb_scale=need, reg=reg,
                                p_floor=settings.phase1_p_floor)
        # any feasible point serves as a seed, so a loose gap is acceptable here
        res = conic.solve(prog, tol=settings.solver_tol, max_iter=settings.solver_max_iter, gap_tol=math.inf)
        if res.status != "Optimal":
            # the elastic program is feasible by construction, so a breakdown
            # here means the thresholds push the cones past double precision
            last = e_hist[-1] if e_hist else math.inf
            raise InfeasibleScenario(f"phase-1 solver stopped ({res.status}) with elastic value {last:.3g}")
        V, W, p, e = _primal(prog, res.primal, sch)
        V = np.array([_project_psd(v) for v in V]) if K else V
        W = _project_psd(W)
        if with_an:
            V, W = concentrate_rank_one(sch, V, W)
        lo = tight_local_point(sch, V, W, p)
        e_hist.append(e)
        if trace is not None:
            trace.elastic.append(e)
        if e <= settings.elastic_tol:
            break
        if len(e_hist) > 1 and e_hist[-2] - e <= 1e-3 * max(e_hist[-2], 1e-12):
            stall += 1
            if stall >= 2:
                if reg <= 1e-8:
                    break
                reg *= 1e-2
                stall = 0
        else:
            stall = 0
    if not e_hist or e_hist[-1] > settings.elastic_tol:
        raise InfeasibleScenario(f"phase-1 elastic value stalled at {e_hist[-1] if e_hist else math.inf:.3g}")
    lo.check()
    return lo, _unscale(V, W, p, c)


def extract_beamformers(sol: FollowerSolution, rank_tol: float = 1e-4) -> np.ndarray:
    """Dominant-eigenpair beams ``sqrt(lambda1) u1``; raises if any V_k is not rank one."""
    beams = []
    for k, V in enumerate(sol.V):
        w, Q = np.linalg.eigh(0.5 * (V + V.conj().T))
        l1 = w[-1]
        l2 = w[-2] if len(w) > 1 else 0.0
        if l1 <= 0:
            raise RankOneViolation(k, math.inf)
        ratio = max(l2, 0.0) / l1
        if ratio > rank_tol:
            raise RankOneViolation(k, ratio)
        u = Q[:, -1]
        # fix the global phase so the largest entry is real positive
        j = int(np.argmax(np.abs(u)))
        u = u * np.exp(-1j * np.angle(u[j]))
        beams.append(math.sqrt(l1) * u)
    return np.array(beams).reshape(len(sol.V), -1) if beams else np.zeros((0, sol.W.shape[0]), complex)


def receive_beamformers(ch: NetworkChannels, sol: FollowerSolution) -> np.ndarray:
    if ch.L == 0:
        return np.zeros((ch.M_r, 0), complex)
    return np.stack([optimal_receive_beamformer(l, ch, sol) for l in range(ch.L)], axis=1)


def verify_solution(ch: NetworkChannels, sol: FollowerSolution, cfg: ScenarioConfig,
                    tol: float = 1e-4) -> VerificationReport:
    """Check the true nonconvex constraints; margins are relative (>= 0 passes)."""
    th = cfg.thresholds
    items: list[CheckItem] = []
    gdl = [dl_sinr(k, ch, sol) for k in range(ch.K)]
    gul = [ul_sinr_optimal(l, ch, sol) for l in range(ch.L)]
    geu, ged = eve_sinrs(ch, sol)
    sdl, sul = secrecy_rates(gdl, ged, gul, geu) if ch.K and ch.L else (
        secrecy_rates(gdl or [0.0], ged, gul or [0.0], geu if ch.L else [0.0]))
    if ch.K:
        m = (sdl - th.rho_dl) / max(th.rho_dl, 1e-12)
        items.append(CheckItem("secrecy_dl", m >= -tol, m))
    if ch.L:
        m = (sul - th.rho_ul) / max(th.rho_ul, 1e-12)
        items.append(CheckItem("secrecy_ul", m >= -tol, m))
    try:
        crlb = crlb_range(ch, sol, cfg.sensing)
    except ZeroIllumination:
        crlb = math.inf
    m = (th.rho_est - crlb) / th.rho_est
    items.append(CheckItem("crlb", m >= -tol, m))
    mats = list(sol.V) + [sol.W]
    scale = max(sum(float(np.real(np.trace(X))) for X in mats), 1e-300)
    lam = min(float(np.linalg.eigvalsh(0.5 * (X + X.conj().T))[0]) for X in mats)
    items.append(CheckItem("psd", lam / scale >= -tol, lam / scale))
    pmin = float(np.min(sol.p)) if sol.p.size else 0.0
    items.append(CheckItem("p_nonneg", pmin / scale >= -tol, pmin / scale))
    return VerificationReport(items)


def _finalize(ch, sol, cfg, settings, status, enforce_rank=True) -> FollowerSolution:
    sol.U = receive_beamformers(ch, sol)
    sol.beams = extract_beamformers(sol, settings.rank_tol if enforce_rank else math.inf)
    sol.status = status
    return sol


def sca_solve(ch: NetworkChannels, cfg: ScenarioConfig, settings: ScaSettings = ScaSettings(),
              with_an: bool = True, warm_start: FollowerSolution | None = None,
              enforce_rank: bool = True) -> tuple[FollowerSolution, ScaTrace]:
    """Phase-1 initialisation followed by the SCA loop until the fractional error drops below eps.

    A ``warm_start`` that passes :func:`verify_solution` replaces phase 1;
    with AN enabled any no-AN solution qualifies, so the AN optimum is never
    worse than the start.  ``enforce_rank=False`` reports rather than raises
    on a relaxed (higher-rank) V_k.
    """
    trace = ScaTrace()
    c = power_unit(ch)
    sch = scale_channels(ch, c)
    if warm_start is not None and verify_solution(ch, warm_start, cfg).passed:
        if not with_an and np.real(np.trace(warm_start.W)) > 0:
            raise ValueError("warm start carries AN but AN is disabled")
        sol = FollowerSolution(V=np.array(warm_start.V), W=np.array(warm_start.W), p=np.array(warm_start.p))
        lo = tight_local_point(sch, sol.V / c, sol.W / c, sol.p / c)
    else:
        lo, sol = initialize_local_point(ch, cfg, settings, with_an, trace)
    need = crlb_threshold_trace(cfg.sensing, cfg.thresholds.rho_est)
    u_prev = sol.u1
    best = sol
    status = "max_iters"
    for _ in range(settings.max_iters):
        prog = build_subproblem(sch, lo, cfg, with_an=with_an, crlb_scale=need)
        res = conic.solve(prog, tol=settings.solver_tol, max_iter=settings.solver_max_iter)
        if res.status != "Optimal":
            if verify_solution(ch, best, cfg).passed:
                trace.status = f"degraded:{res.status}"
                return _finalize(ch, best, cfg, settings, "degraded", enforce_rank), trace
            raise SolverFailure(f"subproblem returned {res.status}")
        V, W, p, _ = _primal(prog, res.primal, sch)
        V = np.array([_project_psd(v) for v in V]) if ch.K else V
        W = _project_psd(W)
        trace.raw_rank.append(max((_eig_ratio(v) for v in V), default=0.0))
        if with_an:
            V, W = concentrate_rank_one(sch, V, W)
        lo = tight_local_point(sch, V, W, p)
        sol = _unscale(V, W, p, c)
        u = sol.u1
        f_err = abs(u_prev - u) / u_prev
        trace.u1.append(u)
        trace.f_err.append(f_err)
        trace.residual.append(verify_solution(ch, sol, cfg).max_violation())
        best, u_prev = sol, u
        if f_err <= settings.eps:
            status = "converged"
            break
    trace.status = status
    final = "optimal" if status == "converged" else status
    return _finalize(ch, best, cfg, settings, final, enforce_rank), trace


def without_an_solve(ch: NetworkChannels, cfg: ScenarioConfig, settings: ScaSettings = ScaSettings(),
                     enforce_rank: bool = True) -> tuple[FollowerSolution, ScaTrace]:
    """Benchmark with the dedicated sensing/jamming covariance forced to zero."""
    return sca_solve(ch, cfg, settings, with_an=False, enforce_rank=enforce_rank)
