import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isac_stackelberg.config import FlightPowerParams
from isac_stackelberg.kinematics import check_mobility, flight_power, in_goal_region, next_position

FP = FlightPowerParams()


def _eq1(v):
    """Independent transcription of the rotary-wing power model."""
    vx, vy, vz = v
    s2 = vx * vx + vy * vy
    s = math.sqrt(s2)
    induced = math.sqrt(math.sqrt(1 + s2 * s2 / (4 * FP.nu0 ** 4)) - s2 / (2 * FP.nu0 ** 2))
    return FP.P0 * (1 + 3 * s2 / FP.U_tip ** 2) + FP.C0 * s ** 3 + FP.G0 * abs(vz) + FP.P1 * induced


def test_hover_power():
    assert flight_power((0, 0, 0), FP) == pytest.approx(168.49, abs=1e-12)


def test_climb_power():
    assert flight_power((0, 0, 10), FP) == pytest.approx(462.49, abs=1e-9)


def test_cruise_power():
    # oracle value 177.955... from the transcription above
    p = flight_power((20, 0, 0), FP)
    assert p == pytest.approx(_eq1((20, 0, 0)), rel=1e-12)
    assert p == pytest.approx(178.0, abs=0.1)


@settings(max_examples=200, deadline=None)
@given(speed=st.floats(0, 40), a=st.floats(0, 2 * math.pi), b=st.floats(0, 2 * math.pi), vz=st.floats(-10, 10))
def test_rotation_invariance_and_positive(speed, a, b, vz):
    p1 = flight_power((speed * math.cos(a), speed * math.sin(a), vz), FP)
    p2 = flight_power((speed * math.cos(b), speed * math.sin(b), vz), FP)
    assert p1 == pytest.approx(p2, rel=1e-12)
    assert p1 > 0
    assert p1 == pytest.approx(_eq1((speed * math.cos(a), speed * math.sin(a), vz)), rel=1e-10)


@pytest.mark.parametrize("v,expect", [
    ((0, 0, 0), (0, 0, 50)),
    ((20, 0, 0), (20, 0, 50)),
    ((0, 10, -5), (0, 10, 45)),
])
def test_next_position(v, expect):
    assert np.array_equal(next_position((0, 0, 50), v, 1.0), np.array(expect, float))


def _kinds(q, q2, mission):
    return sorted(v.kind for v in check_mobility(q, q2, mission))


def test_legal_step(desk):
    m = desk.mission
    assert _kinds((-100, 100, 40), (-50, 100, 40), m) == []


def test_altitude_violation(full):
    # widen the region so only the altitude limit is crossed
    m = dataclasses.replace(full.mission, grid_upper=(100.0, 100.0, 110.0))
    q = (0.0, 0.0, m.z_max - 5)
    assert _kinds(q, (0.0, 0.0, m.z_max + 1), m) == ["altitude"]


def test_obstacle_violation(desk):
    m = desk.mission
    o = np.asarray(m.obstacles[0])
    q2 = o + np.array([m.d_min / 2, 0, 0])
    assert _kinds(q2 - np.array([10.0, 0, 0]), q2, m) == ["obstacle"]


def test_region_and_speed(desk):
    m = desk.mission
    q = np.array([100.0, 0.0, 40.0])
    # 10 m outside the grid in x; also too fast for one slot on that axis
    far = q + np.array([m.v_max[0] * m.dt + 10, 0, 0])
    assert _kinds(q, far, m) == ["region", "speed_x"]


def test_flags_are_order_free(desk):
    m = desk.mission
    q = np.array([0.0, 0.0, 50.0])
    q2 = np.array([0.0, 0.0, m.z_max + 1])
    assert _kinds(q, q2, m) == ["altitude", "region", "speed_z"]


def test_goal_region_boundary(desk):
    m = desk.mission
    qf = np.asarray(m.q_f)
    d = np.array([0.6, 0.8, 0.0])
    assert in_goal_region(qf, m)
    assert in_goal_region(qf + m.r_f * d, m)
    assert not in_goal_region(qf + (m.r_f + 1) * d, m)
