"""Rotary-wing flight power and mobility constraints for the leader UAV."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import FlightPowerParams, MissionConfig

# mobility kinds: altitude (C2), region / obstacle (C3), speed_x/y/z (C5-C7)
KINDS = ("altitude", "region", "obstacle", "speed_x", "speed_y", "speed_z")


@dataclass(frozen=True)
class MobilityViolation:
    kind: str
    detail: str = ""


def flight_power(v, params: FlightPowerParams) -> float:
    """Propulsion power (W) at velocity ``v = (v_x, v_y, v_z)``.

    Blade-profile, parasite, climb and induced terms of the standard
    rotary-wing model.  Hovering gives ``P0 + P1``.
    """
    vx, vy, vz = (float(c) for c in v)
    sq = vx * vx + vy * vy
    speed = np.sqrt(sq)
    p = params
    blade = p.P0 * (1.0 + 3.0 * sq / p.U_tip ** 2)
    parasite = p.C0 * speed ** 3
    climb = p.G0 * abs(vz)
    # sqrt(1 + x^2) - x with x = sq / (2 nu0^2), written to avoid cancellation
    x = sq / (2.0 * p.nu0 ** 2)
    inner = 1.0 / (np.sqrt(1.0 + x * x) + x)
    induced = p.P1 * np.sqrt(inner)
    return float(blade + parasite + climb + induced)


def next_position(q, v, dt: float) -> np.ndarray:
    return np.asarray(q, dtype=float) + np.asarray(v, dtype=float) * dt


def check_mobility(q, q_next, mission: MissionConfig) -> list[MobilityViolation]:
    """List every mobility constraint the move ``q -> q_next`` violates."""
    q = np.asarray(q, dtype=float)
    qn = np.asarray(q_next, dtype=float)
    out: list[MobilityViolation] = []
    tol = 1e-9
    if not (mission.z_min - tol <= qn[2] <= mission.z_max + tol):
        out.append(MobilityViolation("altitude", f"z={qn[2]:g} outside [{mission.z_min:g}, {mission.z_max:g}]"))
    lo, hi = np.asarray(mission.grid_lower), np.asarray(mission.grid_upper)
    if np.any(qn < lo - tol) or np.any(qn > hi + tol):
        out.append(MobilityViolation("region", f"{qn.tolist()} outside operating region"))
    for c in mission.obstacles:
        d = float(np.linalg.norm(qn - np.asarray(c)))
        if d < mission.d_min:
            out.append(MobilityViolation("obstacle", f"{d:.3g} m from obstacle at {list(c)}"))
            break
    step = np.abs(qn - q)
    limit = np.asarray(mission.v_max) * mission.dt
    for axis, name in enumerate(("speed_x", "speed_y", "speed_z")):
        if step[axis] > limit[axis] + tol:
            out.append(MobilityViolation(name, f"|Δ|={step[axis]:g} > {limit[axis]:g}"))
    return out


def in_goal_region(q, mission: MissionConfig) -> bool:
    # inclusive boundary
    return bool(np.linalg.norm(np.asarray(q, float) - np.asarray(mission.q_f)) <= mission.r_f)
