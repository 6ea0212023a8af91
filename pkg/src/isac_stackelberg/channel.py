"""Propagation: LoS probability, path loss, Rician fading, UPA steering,
the radar round trip, clutter and the aggregated receive-noise covariance."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ArrayGeometry, ChannelConfig, ScenarioConfig


class DegenerateGeometry(ValueError):
    pass


@dataclass(frozen=True)
class ClutterModel:
    angles: tuple[tuple[float, float], ...]  # (theta, phi) in radians
    cnr_db: float

    @property
    def n_c(self) -> int:
        return len(self.angles)


@dataclass(frozen=True, eq=False)
class NetworkChannels:
    """All links seen at one leader position.

    Vectors follow the signal model: DL user k receives ``h_ak^H x``, the
    R-BS receives UL user l through ``h_la``, the eavesdropper receives
    ``h_ae^H x`` from the R-BS and ``h_le`` from UL user l.
    """

    h_ak: np.ndarray        # (K, M_t)
    h_la: np.ndarray        # (L, M_r)
    h_le: np.ndarray        # (L,)
    h_lk: np.ndarray        # (L, K)
    h_ae: np.ndarray        # (M_t,)
    A0: np.ndarray          # (M_r, M_t)
    zeta0_sq: float
    Sigma_n: np.ndarray     # (M_r, M_r)
    sigma2_dl: np.ndarray   # (K,)
    sigma2_e: float
    q_e: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def K(self) -> int:
        return self.h_ak.shape[0]

    @property
    def L(self) -> int:
        return self.h_la.shape[0]

    @property
    def M_t(self) -> int:
        return self.h_ak.shape[1]

    @property
    def M_r(self) -> int:
        return self.h_la.shape[1]

    @property
    def H_ak(self) -> np.ndarray:
        return np.einsum("ki,kj->kij", self.h_ak, self.h_ak.conj())

    @property
    def H_ae(self) -> np.ndarray:
        return np.outer(self.h_ae, self.h_ae.conj())

    def replace(self, **kw) -> "NetworkChannels":
        import dataclasses
        return dataclasses.replace(self, **kw)


def elevation_angle(q_i, q_j) -> float:
    """Elevation of ``q_i`` seen from ``q_j`` in degrees."""
    q_i, q_j = np.asarray(q_i, float), np.asarray(q_j, float)
    d = float(np.linalg.norm(q_i - q_j))
    if d == 0.0:
        raise DegenerateGeometry("coincident positions")
    return math.degrees(math.asin(max(-1.0, min(1.0, (q_i[2] - q_j[2]) / d))))


def los_probability(theta_deg: float, cfg: ChannelConfig) -> float:
    x = -cfg.E2 * (theta_deg - cfg.E1) + math.log(cfg.E1)
    if x > 0:
        # exp(-x) form avoids overflow deep in the shadowed region
        z = math.exp(-x)
        return z / (1.0 + z)
    return 1.0 / (1.0 + math.exp(x))


def expected_gain(d: float, theta_deg: float, cfg: ChannelConfig) -> float:
    """E|h|^2 = (varsigma + (1 - varsigma) P_LoS) beta0 d^-alpha."""
    p_hat = cfg.varsigma + (1.0 - cfg.varsigma) * los_probability(theta_deg, cfg)
    return p_hat * cfg.beta0 * d ** (-cfg.alpha)


def steering_vector(theta: float, phi: float, side: str, geom: ArrayGeometry) -> np.ndarray:
    """UPA response: horizontal ramp kron vertical ramp, unit-modulus entries."""
    m_h, m_v = geom.tx if side == "tx" else geom.rx
    k = 2.0 * math.pi * geom.spacing / geom.wavelength
    u = k * math.sin(theta) * math.cos(phi)
    v = k * math.sin(theta) * math.sin(phi)
    a_h = np.exp(1j * u * np.arange(m_h))
    a_v = np.exp(1j * v * np.arange(m_v))
    return np.kron(a_h, a_v)


def _direction(src, dst) -> tuple[float, float, float]:
    """(distance, angle from the array normal, azimuth) of dst seen from src."""
    diff = np.asarray(dst, float) - np.asarray(src, float)
    d = float(np.linalg.norm(diff))
    if d == 0.0:
        raise DegenerateGeometry("coincident positions")
    theta = math.acos(max(-1.0, min(1.0, abs(diff[2]) / d)))
    phi = math.atan2(diff[1], diff[0])
    return d, theta, phi


def round_trip_gain(d_ae: float, cfg: ScenarioConfig) -> float:
    """|zeta0|^2 = g_rcs beta0^2 d^-4 (monostatic radar-equation scaling)."""
    return cfg.channel.g_rcs * cfg.channel.beta0 ** 2 * d_ae ** (-4.0)


def clutter_covariance(model: ClutterModel, geom: ArrayGeometry, sigma2_a: float) -> np.ndarray:
    m = geom.M_r
    if model.n_c == 0 or math.isinf(model.cnr_db) and model.cnr_db < 0:
        return np.zeros((m, m), dtype=complex)
    R = np.zeros((m, m), dtype=complex)
    for theta, phi in model.angles:
        a = steering_vector(theta, phi, "rx", geom)
        R += np.outer(a, a.conj())
    cnr = 10.0 ** (model.cnr_db / 10.0)
    R *= m * sigma2_a * cnr / np.real(np.trace(R))
    return 0.5 * (R + R.conj().T)


def default_clutter(cfg: ScenarioConfig, theta_t: float, phi_t: float) -> ClutterModel:
    angles = []
    for d_el, d_az in cfg.channel.clutter.offsets_deg:
        th = min(max(theta_t + math.radians(d_el), 0.0), math.pi / 2)
        angles.append((th, phi_t + math.radians(d_az)))
    return ClutterModel(tuple(angles), cfg.channel.clutter.cnr_db)


def _link(src, dst, cfg: ChannelConfig, n: int, steer, mode: str, rng) -> np.ndarray:
    d = float(np.linalg.norm(np.asarray(dst, float) - np.asarray(src, float)))
    if d == 0.0:
        raise DegenerateGeometry("coincident positions")
    hi, lo = (dst, src) if dst[2] >= src[2] else (src, dst)
    gain = expected_gain(d, elevation_angle(hi, lo), cfg)
    g_los = steer * np.exp(-2j * math.pi * d / (3e8 / cfg.f_c))
    if mode == "sampled":
        k = cfg.kappa
        w = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
        if math.isinf(k):
            g = g_los
        else:
            g = math.sqrt(k / (k + 1.0)) * g_los + math.sqrt(1.0 / (k + 1.0)) * w
    else:
        g = g_los
    return math.sqrt(gain) * g


def build_channels(q_e, cfg: ScenarioConfig, mode: str = "expected",
                   stream: np.random.Generator | None = None,
                   clutter: ClutterModel | None = None) -> NetworkChannels:
    """Assemble every link for an eavesdropper at ``q_e``.

    In ``expected`` mode the result depends on ``q_e`` only: LoS phase
    geometry scaled to the regularised expected power.  ``sampled`` mode adds
    Rician scattering drawn from ``stream``.
    """
    q_e = np.asarray(q_e, dtype=float)
    if q_e[2] <= 0:
        raise DegenerateGeometry("eavesdropper must be above ground")
    if mode == "sampled" and stream is None:
        raise ValueError("sampled mode needs a random stream")
    users, geom, ch = cfg.users, cfg.arrays, cfg.channel
    bs = np.asarray(users.bs, float)

    h_ak = []
    for q in users.dl_users:
        _, th, ph = _direction(bs, q)
        h_ak.append(_link(bs, q, ch, geom.M_t, steering_vector(th, ph, "tx", geom), mode, stream))
    h_la = []
    for q in users.ul_users:
        _, th, ph = _direction(bs, q)
        h_la.append(_link(q, bs, ch, geom.M_r, steering_vector(th, ph, "rx", geom), mode, stream))
    h_le = np.array([_link(q, q_e, ch, 1, np.ones(1), mode, stream)[0] for q in users.ul_users])
    h_lk = np.array([[_link(ql, qk, ch, 1, np.ones(1), mode, stream)[0] for qk in users.dl_users]
                     for ql in users.ul_users]).reshape(users.L, users.K)

    d_ae, th_e, ph_e = _direction(bs, q_e)
    a_t = steering_vector(th_e, ph_e, "tx", geom)
    a_r = steering_vector(th_e, ph_e, "rx", geom)
    h_ae = _link(bs, q_e, ch, geom.M_t, a_t, mode, stream)
    A0 = np.outer(a_r, a_t.conj())

    if clutter is None:
        clutter = default_clutter(cfg, th_e, ph_e)
    n = cfg.noise
    Sigma_n = clutter_covariance(clutter, geom, n.sigma2_a) + (n.sigma2_si + n.sigma2_a) * np.eye(geom.M_r)

    return NetworkChannels(
        h_ak=np.array(h_ak), h_la=np.array(h_la), h_le=h_le, h_lk=h_lk, h_ae=h_ae,
        A0=A0, zeta0_sq=round_trip_gain(d_ae, cfg), Sigma_n=Sigma_n,
        sigma2_dl=np.full(users.K, n.sigma2_dl), sigma2_e=n.sigma2_e, q_e=q_e,
    )
