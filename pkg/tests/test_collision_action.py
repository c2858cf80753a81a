import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import central_gradient, hamilton_action, propagate, shoot_velocity
from second_species.collision_action import (
    MassParams,
    body_positions,
    early_collision_distance,
    energy_fixed_action_L,
    energy_fixed_segment,
    relative_velocity_jump_data,
    segment_action,
    segment_gradient,
    twist_determinant,
)
from second_species.kepler_lambert import NoSolutionError, action_J, solve_fixed_time

XM = np.array([1.0, 0.1])
XP = np.array([-0.2, 0.9])
MASSES = MassParams(mu=0.0, alpha1=0.3)


def rot(theta):
    return np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])


def random_segments(count, seed, k=(1, 2)):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        r = rng.uniform(0.4, 1.3, 2)
        th = rng.uniform(0, 2 * math.pi, 2)
        xm = r[0] * np.array([math.cos(th[0]), math.sin(th[0])])
        xp = r[1] * np.array([math.cos(th[1]), math.sin(th[1])])
        if abs(math.sin(th[1] - th[0])) < 0.1:
            continue
        try:
            out.append(segment_action(k, rng.uniform(12.5, 16.0), xm, xp, MASSES))
        except NoSolutionError:
            pass
    return out


def test_mass_params_derived_fields():
    m = MassParams(mu=1e-3, alpha1=0.3)
    assert m.alpha1 + m.alpha2 == 1.0
    assert m.alpha == pytest.approx(0.21, abs=1e-16)
    assert m.with_mu(0.5).alpha1 == 0.3
    with pytest.raises(ValueError):
        MassParams(mu=0.0, alpha1=1.0)
    with pytest.raises(ValueError):
        MassParams(mu=-1.0, alpha1=0.5)


@pytest.mark.parametrize("alpha1", [0.1, 0.5, 0.9])
def test_equal_revolutions_reduce_to_single_arc(alpha1):
    m = MassParams(0.0, alpha1)
    seg = segment_action((0, 0), 1.8, XM, XP, m)
    arc = solve_fixed_time(0, 1.8, XM, XP)
    assert seg.action_S == pytest.approx(arc.action_F, abs=1e-14)
    y_minus, y_plus, E = segment_gradient(seg)
    np.testing.assert_allclose(y_minus, arc.y_minus, atol=1e-14)
    np.testing.assert_allclose(y_plus, arc.y_plus, atol=1e-14)


def test_mixed_direction_segment_against_shooting_oracle():
    # one body turns clockwise, the other counterclockwise with an extra revolution
    m = MassParams(0.0, 0.5)
    xm, xp = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    tau = 8.0
    seg = segment_action((-1, 1), tau, xm, xp, m)
    total = 0.0
    for arc in seg.arcs:
        v0 = shoot_velocity(xm, xp, tau, arc.y_minus + 1e-3)
        np.testing.assert_allclose(v0, arc.y_minus, atol=1e-9)
        F, _ = hamilton_action(xm, v0, tau)
        total += 0.5 * F
    assert seg.action_S == pytest.approx(total, abs=1e-9)


def test_segment_arcs_share_time_and_endpoints():
    for seg in random_segments(10, 1):
        for arc in seg.arcs:
            assert arc.tof == seg.tof
            np.testing.assert_array_equal(arc.x_minus, seg.x_minus)
            np.testing.assert_array_equal(arc.x_plus, seg.x_plus)
        a1, a2 = MASSES.alpha1, MASSES.alpha2
        assert seg.action_S == pytest.approx(a1 * seg.arcs[0].action_F + a2 * seg.arcs[1].action_F)


def test_concave_in_time_with_revolutions():
    for seg in random_segments(15, 2):
        assert seg.d2S_dtau2 < 0
        h = 1e-3
        S = [segment_action(seg.k, seg.tof + d, seg.x_minus, seg.x_plus, MASSES,
                            seg.arc_energies).action_S for d in (-h, 0, h)]
        assert (S[0] - 2 * S[1] + S[2]) / h ** 2 == pytest.approx(seg.d2S_dtau2, rel=1e-4)


def test_short_arcs_are_convex_in_time():
    # a direct arc speeds up as its energy rises, so the sign flips
    seg = segment_action((0, 0), 1.8, XM, XP, MASSES)
    assert seg.d2S_dtau2 > 0


def test_gradient_matches_finite_differences():
    for seg in random_segments(8, 3):
        guesses = seg.arc_energies

        def S(z):
            return segment_action(seg.k, z[0], z[1:3], z[3:5], MASSES, guesses).action_S

        g = central_gradient(S, np.concatenate([[seg.tof], seg.x_minus, seg.x_plus]), h=1e-6)
        y_minus, y_plus, E = segment_gradient(seg)
        assert -g[0] == pytest.approx(E, abs=1e-7)
        np.testing.assert_allclose(-g[1:3], y_minus, atol=1e-7)
        np.testing.assert_allclose(g[3:5], y_plus, atol=1e-7)


def test_energy_is_weighted_arc_energy():
    for seg in random_segments(8, 4):
        E1, E2 = seg.arc_energies
        assert seg.energy == pytest.approx(MASSES.alpha1 * E1 + MASSES.alpha2 * E2, abs=1e-14)


# --- relative velocities ------------------------------------------------------

def test_identical_arcs_have_no_relative_velocity():
    seg_in = segment_action((0, 0), 1.8, XM, XP, MASSES)
    seg_out = segment_action((0, 0), 1.6, XP, np.array([-0.9, -0.3]), MASSES)
    v_minus, v_plus = relative_velocity_jump_data(seg_in, seg_out)
    np.testing.assert_allclose(v_minus, 0.0, atol=1e-15)
    np.testing.assert_allclose(v_plus, v_minus, atol=1e-15)


def test_mirror_pair_returns_along_incoming_direction():
    # endpoints on one line: the outgoing segment is the reflection of the
    # time-reversed incoming one, so the relative velocity is exactly reversed
    a, b = np.array([-0.5, 0.0]), np.array([1.0, 0.0])
    seg_in = segment_action((1, 2), 13.0, a, b, MASSES)
    seg_out = segment_action((1, 2), 13.0, b, a, MASSES)
    v_minus, v_plus = relative_velocity_jump_data(seg_in, seg_out)
    assert np.linalg.norm(v_minus) > 1e-2
    assert np.linalg.norm(v_plus + v_minus) <= 1e-12


def test_relative_velocity_definition():
    seg_in = random_segments(1, 5)[0]
    seg_out = segment_action((1, 2), 14.0, seg_in.x_plus, np.array([0.3, -0.8]), MASSES)
    v_minus, v_plus = relative_velocity_jump_data(seg_in, seg_out)
    alpha = MASSES.alpha
    np.testing.assert_allclose(v_minus, alpha * (seg_in.arcs[1].y_plus - seg_in.arcs[0].y_plus))
    np.testing.assert_allclose(v_plus, alpha * (seg_out.arcs[1].y_minus - seg_out.arcs[0].y_minus))


def test_mismatched_collision_point_rejected():
    seg_in = segment_action((0, 0), 1.8, XM, XP, MASSES)
    seg_out = segment_action((0, 0), 1.8, XP + 0.1, XM, MASSES)
    with pytest.raises(ValueError):
        relative_velocity_jump_data(seg_in, seg_out)


# --- energy-fixed action ------------------------------------------------------

def test_energy_fixed_single_arc_is_maupertuis_action():
    E = -0.55
    L = energy_fixed_action_L((0, 0), E, XM, XP, MASSES)
    assert L == pytest.approx(action_J(0, E, XM, XP), abs=1e-12)


def test_energy_fixed_segment_hits_energy():
    seg = energy_fixed_segment((1, 2), -0.5, XM, XP, MASSES)
    assert seg.energy == pytest.approx(-0.5, abs=1e-13)
    assert seg.d2S_dtau2 < 0
    # maximiser: S + tau E is stationary and locally maximal in tau
    values = [segment_action((1, 2), seg.tof + d, XM, XP, MASSES, seg.arc_energies).action_S
              + (seg.tof + d) * (-0.5) for d in (-1e-3, 0.0, 1e-3)]
    assert values[1] > values[0] and values[1] > values[2]


@pytest.mark.parametrize("E", [-0.45, -0.3])
def test_energy_fixed_homogeneity(E):
    c = -2 * E
    L = energy_fixed_action_L((1, 2), E, XM, XP, MASSES)
    scaled = energy_fixed_action_L((1, 2), -0.5, XM * c, XP * c, MASSES)
    assert L == pytest.approx(c ** -0.5 * scaled, abs=1e-10)


def test_energy_fixed_gradient_law():
    E = -0.5
    seg = energy_fixed_segment((1, 2), E, XM, XP, MASSES)

    def L(z):
        return energy_fixed_action_L((1, 2), E, z[:2], z[2:], MASSES, seg.tof, seg.arc_energies)

    g = central_gradient(L, np.concatenate([XM, XP]), h=1e-6)
    np.testing.assert_allclose(g[2:], seg.y_plus, atol=1e-7)
    np.testing.assert_allclose(-g[:2], seg.y_minus, atol=1e-7)


def test_energy_fixed_without_root():
    with pytest.raises(NoSolutionError):
        energy_fixed_action_L((1, 2), -0.62, XM, XP, MASSES)


# --- twist ------------------------------------------------------------------------

def test_twist_determinant_stable_under_step_halving():
    for seg in random_segments(6, 6):
        full = twist_determinant(seg, h=1e-5)
        half = twist_determinant(seg, h=5e-6)
        assert math.isfinite(full)
        assert half == pytest.approx(full, rel=1e-3)


@settings(max_examples=10, deadline=None)
@given(st.floats(-math.pi, math.pi))
def test_twist_determinant_rotation_invariant(theta):
    seg = segment_action((1, 2), 13.0, XM, XP, MASSES)
    R = rot(theta)
    turned = segment_action((1, 2), 13.0, R @ XM, R @ XP, MASSES)
    assert abs(twist_determinant(turned)) == pytest.approx(abs(twist_determinant(seg)), rel=1e-5)


# --- early collisions ---------------------------------------------------------

def test_body_positions_follow_integrated_orbits():
    seg = segment_action((1, 2), 13.0, XM, XP, MASSES)
    pos = body_positions(seg, [0.0, 4.0, seg.tof])
    for i, arc in enumerate(seg.arcs):
        np.testing.assert_allclose(pos[0, i], XM, atol=1e-14)
        np.testing.assert_allclose(pos[2, i], XP, atol=1e-10)
        np.testing.assert_allclose(pos[1, i], propagate(XM, arc.y_minus, 4.0)[0], atol=1e-10)


def test_early_collision_distance_against_dense_sampling():
    seg = segment_action((1, 2), 13.0, XM, XP, MASSES)
    ts = np.linspace(0.0, seg.tof, 20001)[1:-1]
    pos = body_positions(seg, ts)
    d = np.linalg.norm(pos[:, 1] - pos[:, 0], axis=1)
    interior = [d[i] for i in range(1, len(d) - 1) if d[i] <= d[i - 1] and d[i] <= d[i + 1]]
    reported = early_collision_distance(seg)
    assert reported > 0
    assert reported <= min(interior) + 1e-12
    assert reported == pytest.approx(min(interior), abs=1e-6)
