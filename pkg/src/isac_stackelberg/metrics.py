"""Closed-form performance quantities: SINRs, worst-case secrecy rates,
MMSE-type receive beamformers, the range CRLB and both players' utilities."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import NetworkChannels
from .config import SPEED_OF_LIGHT, ScenarioConfig, SensingConfig
from .kinematics import flight_power


class SingularCovariance(np.linalg.LinAlgError):
    pass


class ZeroIllumination(ValueError):
    pass


@dataclass
class FollowerSolution:
    V: np.ndarray                 # (K, M_t, M_t)
    W: np.ndarray                 # (M_t, M_t)
    p: np.ndarray                 # (L,)
    U: np.ndarray | None = None   # (M_r, L)
    beams: np.ndarray | None = None  # (K, M_t)
    status: str = "optimal"

    @property
    def u1(self) -> float:
        return network_power(self)

    @property
    def dlp(self) -> float:
        return float(sum(np.real(np.trace(v)) for v in self.V))

    @property
    def rsp(self) -> float:
        return float(np.real(np.trace(self.W)))

    @property
    def ulp(self) -> float:
        return float(np.sum(self.p))


@dataclass
class MetricsReport:
    gamma_dl: list
    gamma_ul: list
    gamma_eve_ul: list
    gamma_eve_dl: float
    secrecy_dl: float
    secrecy_ul: float
    crlb: float
    u1: float

    def as_row(self) -> dict:
        row = {}
        for k, v in asdict(self).items():
            if isinstance(v, list):
                row.update({f"{k}_{i}": float(x) for i, x in enumerate(v)})
            else:
                row[k] = float(v)
        return row


def _quad(h: np.ndarray, A: np.ndarray) -> float:
    return float(np.real(h.conj() @ A @ h))


def network_power(sol: FollowerSolution) -> float:
    return float(sum(np.real(np.trace(v)) for v in sol.V) + np.real(np.trace(sol.W)) + np.sum(sol.p))


def transmit_covariance(sol: FollowerSolution) -> np.ndarray:
    S = np.sum(sol.V, axis=0) + sol.W if len(sol.V) else np.array(sol.W, dtype=complex)
    return 0.5 * (S + S.conj().T)


def dl_sinr(k: int, ch: NetworkChannels, sol: FollowerSolution) -> float:
    h = ch.h_ak[k]
    signal = _quad(h, sol.V[k])
    interf = float(np.sum(sol.p * np.abs(ch.h_lk[:, k]) ** 2))
    interf += sum(_quad(h, sol.V[j]) for j in range(len(sol.V)) if j != k)
    interf += _quad(h, sol.W) + ch.sigma2_dl[k]
    return signal / interf


def psi_matrix(l: int, ch: NetworkChannels, p: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Interference-plus-noise covariance seen by the receive beamformer of UL user ``l``."""
    psi = ch.zeta0_sq * ch.A0 @ S @ ch.A0.conj().T + ch.Sigma_n
    for j in range(ch.L):
        if j != l:
            psi = psi + p[j] * np.outer(ch.h_la[j], ch.h_la[j].conj())
    return 0.5 * (psi + psi.conj().T)


def _check_noise(ch: NetworkChannels, tol: float = 1e-12) -> None:
    lam_min = float(np.linalg.eigvalsh(ch.Sigma_n)[0])
    if lam_min < tol:
        raise SingularCovariance(f"Sigma_n minimum eigenvalue {lam_min:.3g}")


def optimal_receive_beamformer(l: int, ch: NetworkChannels, sol: FollowerSolution) -> np.ndarray:
    """Closed-form maximiser of the UL generalised Rayleigh quotient, Psi^-1 h."""
    _check_noise(ch)
    psi = psi_matrix(l, ch, sol.p, transmit_covariance(sol))
    return np.linalg.solve(psi, ch.h_la[l])


def ul_sinr(l: int, ch: NetworkChannels, sol: FollowerSolution, u: np.ndarray) -> float:
    """UL SINR of user ``l`` for an arbitrary receive vector ``u``."""
    psi = psi_matrix(l, ch, sol.p, transmit_covariance(sol))
    num = sol.p[l] * abs(np.vdot(u, ch.h_la[l])) ** 2
    return float(num / np.real(u.conj() @ psi @ u))


def ul_sinr_optimal(l: int, ch: NetworkChannels, sol: FollowerSolution) -> float:
    _check_noise(ch)
    psi = psi_matrix(l, ch, sol.p, transmit_covariance(sol))
    h = ch.h_la[l]
    return float(sol.p[l] * np.real(h.conj() @ np.linalg.solve(psi, h)))


def eve_sinrs(ch: NetworkChannels, sol: FollowerSolution) -> tuple[np.ndarray, float]:
    g = np.abs(ch.h_le) ** 2
    rx = sol.p * g
    S = transmit_covariance(sol)
    h = ch.h_ae
    jam = _quad(h, S)
    ul = np.array([rx[l] / (rx.sum() - rx[l] + jam + ch.sigma2_e) for l in range(ch.L)])
    Vsum = np.sum(sol.V, axis=0) if len(sol.V) else np.zeros_like(sol.W)
    dl = _quad(h, Vsum) / (rx.sum() + _quad(h, sol.W) + ch.sigma2_e)
    return ul, float(dl)


def secrecy_rates(gamma_dl, gamma_eve_dl, gamma_ul, gamma_eve_ul) -> tuple[float, float]:
    """Worst-case DL and UL secrecy rates in bit/s/Hz, clipped at zero."""
    gdl = np.asarray(gamma_dl, float)
    gul = np.asarray(gamma_ul, float)
    gap_dl = np.log2(1.0 + gdl) - math.log2(1.0 + float(gamma_eve_dl))
    gap_ul = np.log2(1.0 + gul) - np.log2(1.0 + np.asarray(gamma_eve_ul, float))
    return float(np.min(np.maximum(gap_dl, 0.0))), float(np.min(np.maximum(gap_ul, 0.0)))


def illumination_trace(ch: NetworkChannels, S: np.ndarray, method: str = "solve") -> float:
    """tr(A0 S A0^H Sigma_n^-1), by linear solve or by eigendecomposition."""
    B = ch.A0 @ S @ ch.A0.conj().T
    if method == "solve":
        return float(np.real(np.trace(np.linalg.solve(ch.Sigma_n, B))))
    w, Q = np.linalg.eigh(ch.Sigma_n)
    inv = (Q / w) @ Q.conj().T
    return float(np.real(np.trace(B @ inv)))


def crlb_from_trace(trace: float, zeta0_sq: float, sensing: SensingConfig) -> float:
    B = sensing.bandwidth
    return SPEED_OF_LIGHT ** 2 / (8.0 * sensing.gamma_shape_sq * B ** 2 * zeta0_sq * trace)


def crlb_range(ch: NetworkChannels, sol: FollowerSolution, sensing: SensingConfig,
               tol: float = 1e-300) -> float:
    """Range-estimation CRLB in m^2."""
    tr = illumination_trace(ch, transmit_covariance(sol))
    if not tr * ch.zeta0_sq > tol:
        raise ZeroIllumination("target not illuminated")
    return crlb_from_trace(tr, ch.zeta0_sq, sensing)


def crlb_threshold_trace(sensing: SensingConfig, rho_est: float) -> float:
    """Right-hand constant of the linear CRLB constraint, C^2 / (8 gamma^2 B^2 rho_est)."""
    return SPEED_OF_LIGHT ** 2 / (8.0 * sensing.gamma_shape_sq * sensing.bandwidth ** 2 * rho_est)


def utilities(sol: FollowerSolution | float, v, cfg: ScenarioConfig,
              u1_max: float | None = None, pf_max: float | None = None):
    """Return ``(u1, u2, u2_normalized)``; the last is None without denominators."""
    u1 = sol if isinstance(sol, (int, float)) else network_power(sol)
    lam = cfg.game.lam
    pf = flight_power(v, cfg.flight)
    u2 = lam * u1 - (1.0 - lam) * pf
    u2n = None
    if u1_max is not None and pf_max is not None:
        if not (u1_max > 0 and pf_max > 0):
            raise ValueError("normalisation denominators must be positive")
        u2n = lam * u1 / u1_max - (1.0 - lam) * pf / pf_max
    return float(u1), float(u2), u2n


def evaluate(ch: NetworkChannels, sol: FollowerSolution, cfg: ScenarioConfig) -> MetricsReport:
    gdl = [dl_sinr(k, ch, sol) for k in range(ch.K)]
    gul = [ul_sinr_optimal(l, ch, sol) for l in range(ch.L)]
    geu, ged = eve_sinrs(ch, sol)
    sdl, sul = secrecy_rates(gdl, ged, gul, geu)
    try:
        crlb = crlb_range(ch, sol, cfg.sensing)
    except ZeroIllumination:
        crlb = math.inf
    return MetricsReport(gdl, gul, geu.tolist(), ged, sdl, sul, crlb, network_power(sol))
