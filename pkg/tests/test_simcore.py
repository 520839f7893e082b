import numpy as np
import pytest

from evsm import simcore
from evsm.rng import Stream
from evsm.simcore import (
    DamageMode,
    InputError,
    NoiseSpec,
    RobotConfig,
    RobotState,
    apply_damage,
    initial_state,
    map_action,
    mirror_action,
    mirror_legwise,
    mirror_state,
    step_dynamics,
)

CFG = RobotConfig()

# symmetric forward gait: every hip 0.3 -> -0.3 rad, feet planted, knees straight
A_PREV = np.array([0.5, -1.0, 0.0] * 4)
A_TGT = np.array([-0.5, -1.0, 0.0] * 4)
MU_ONE = np.ones(4)


def oracle_step(q_prev, q_real, mu, gains, cfg=CFG):
    """Independent scalar re-evaluation of the stance-stroke formulas."""
    traction = []
    for i in range(4):
        theta_p, phi_p, psi_p = q_prev[3 * i:3 * i + 3]
        theta_r, phi_r, psi_r = q_real[3 * i:3 * i + 3]
        l_eff = cfg.l0 + cfg.l1 * np.cos((psi_p + psi_r) / 2)
        w = max(0.0, np.cos((phi_p + phi_r) / 2)) ** 2
        s = (theta_p - theta_r) * l_eff
        traction.append(mu[i] * w * s * gains[i])

    def h(q):
        return sum((cfg.l0 + cfg.l1 * np.cos(q[3 * i + 2])) * np.cos(q[3 * i + 1])
                   for i in range(4)) / 4

    def pitch(q):
        return 0.5 * ((q[1] + q[4]) / 2 - (q[7] + q[10]) / 2)

    def roll(q):
        return 0.5 * ((q[1] + q[7]) / 2 - (q[4] + q[10]) / 2)

    dx = sum(traction) / 4
    dyaw = ((traction[1] + traction[3]) - (traction[0] + traction[2])) / (4 * cfg.half_width)
    return np.array([dx, 0.0, h(q_real) - h(q_prev),
                     roll(q_real) - roll(q_prev), pitch(q_real) - pitch(q_prev), dyaw])


def test_zero_motion_is_exactly_zero():
    state = initial_state(CFG, A_PREV)
    _, delta = step_dynamics(CFG, state, A_PREV, MU_ONE)
    assert np.array_equal(delta, np.zeros(6))


def test_symmetric_gait_forward_stroke():
    # stroke 0.6 rad * l_eff 0.18 m = 0.108 m per leg, full stance weight
    state = initial_state(CFG, A_PREV)
    _, delta = step_dynamics(CFG, state, A_TGT, MU_ONE)
    assert delta[0] == pytest.approx(0.108, abs=1e-12)
    assert np.array_equal(delta[1:], np.zeros(5))


def test_low_friction_right_side_turns_right():
    # right legs mu=0.2: dx = (0.108+0.108+0.0216+0.0216)/4, dyaw = -0.48 (right turn)
    mu = np.array([1.0, 0.2, 1.0, 0.2])
    state = initial_state(CFG, A_PREV)
    _, delta = step_dynamics(CFG, state, A_TGT, mu)
    assert delta[0] == pytest.approx(0.0648, abs=1e-12)
    assert delta[5] == pytest.approx(-0.48, abs=1e-12)


def test_broken_endlink_slows_and_deflects():
    state = apply_damage(initial_state(CFG, A_PREV), DamageMode("broken_endlink", 3))
    _, delta = step_dynamics(CFG, state, A_TGT, MU_ONE)
    assert delta[0] == pytest.approx((3 * 0.108 + 0.25 * 0.108) / 4, abs=1e-12)
    assert delta[5] != 0.0
    assert delta[5] < 0  # right rear weak -> deflects right


def test_no_damage_is_bit_identical():
    s1 = initial_state(CFG, A_PREV)
    s2 = initial_state(CFG, A_PREV)
    _, d1 = step_dynamics(CFG, s1, A_TGT, MU_ONE)
    _, d2 = step_dynamics(CFG, s2, A_TGT, MU_ONE)
    assert np.array_equal(d1, d2)
    assert np.array_equal(s1.gains, s2.gains)


def test_stuck_joint_at_target_is_noop():
    state = initial_state(CFG, A_PREV)
    stuck = apply_damage(state, DamageMode("stuck_joint", 0, 0))
    # command the hip to where it already is
    _, delta = step_dynamics(CFG, stuck, A_PREV, MU_ONE)
    assert np.array_equal(delta, np.zeros(6))


def test_stuck_joint_pins_commanded_motion():
    state = initial_state(CFG, A_PREV)
    stuck = apply_damage(state, DamageMode("stuck_joint", 0, 0))
    new, delta = step_dynamics(CFG, stuck, A_TGT, MU_ONE)
    assert new.q[0] == state.q[0]  # pinned hip never moved
    _, healthy = step_dynamics(CFG, initial_state(CFG, A_PREV), A_TGT, MU_ONE)
    assert delta[0] < healthy[0]


def test_sign_flip_reverses_stroke():
    state = initial_state(CFG, A_PREV)
    flipped = apply_damage(state, DamageMode("sign_flip", 1, 0))
    new, _ = step_dynamics(CFG, flipped, A_TGT, MU_ONE)
    assert new.q[3] == pytest.approx(0.3)  # commanded -0.3, flipped back to +0.3


def test_apply_damage_leaves_original_untouched():
    state = initial_state(CFG, A_PREV)
    apply_damage(state, DamageMode("broken_endlink", 2))
    assert np.array_equal(state.gains, np.ones(4))


def test_damage_validation():
    state = initial_state(CFG)
    with pytest.raises(InputError):
        apply_damage(state, DamageMode("broken_endlink", 7))
    with pytest.raises(InputError):
        apply_damage(state, DamageMode("stuck_joint", 0, 5))
    with pytest.raises(InputError):
        apply_damage(state, DamageMode("melted", 0))


def test_action_validation():
    state = initial_state(CFG)
    with pytest.raises(InputError):
        step_dynamics(CFG, state, np.full(12, 1.5), MU_ONE)
    with pytest.raises(InputError):
        step_dynamics(CFG, state, np.full(12, np.nan), MU_ONE)
    with pytest.raises(InputError):
        step_dynamics(CFG, state, A_TGT, np.full(4, 0.05))


def test_map_action_affine_endpoints():
    q = map_action(CFG, np.array([1.0, 1.0, 1.0] * 4))
    assert q[0] == pytest.approx(0.6)
    assert q[1] == pytest.approx(1.0)
    assert q[2] == pytest.approx(0.8)
    q = map_action(CFG, np.array([-1.0, -1.0, -1.0] * 4))
    assert q[0] == pytest.approx(-0.6)
    assert q[1] == pytest.approx(0.0)
    assert q[2] == pytest.approx(-0.8)


# -- variants ----------------------------------------------------------------


def test_variant0_identity():
    a = Stream(1).uniform(12, -1, 1)
    assert np.array_equal(simcore.remap_variant(RobotConfig(variant=0), a), a)


def test_variant1_swaps_lift_and_knee():
    cfg1 = RobotConfig(variant=1)
    a = np.zeros(12)
    a[1] = 0.5  # nominal lift channel
    out = simcore.remap_variant(cfg1, a)
    assert out[1] == 0.0 and out[2] == 0.5


def test_variant1_zero_hips_zero_forward():
    cfg1 = RobotConfig(variant=1)
    a0 = np.array([0.0, -1.0, 0.0] * 4)
    a1 = np.array([0.0, 0.3, -0.6] * 4)  # lift/knee channels only
    state = initial_state(cfg1, a0)
    _, delta = step_dynamics(cfg1, state, a1, MU_ONE)
    assert delta[0] == 0.0


def test_variant2_negates_right_hips_cancels_forward():
    cfg2 = RobotConfig(variant=2)
    state = initial_state(cfg2, A_PREV)
    _, delta = step_dynamics(cfg2, state, A_TGT, MU_ONE)
    assert delta[0] == 0.0
    assert abs(delta[5]) > 0


def test_variant3_rotates_roles():
    cfg3 = RobotConfig(variant=3)
    a = np.zeros(12)
    a[0] = 0.5  # nominal hip channel now drives the lift
    q = map_action(cfg3, a)
    assert q[0] == 0.0
    assert q[1] == pytest.approx(0.5 * (0.5 + 1.0))


# -- spec invariants as seeded property loops ---------------------------------


def test_mirror_symmetry_exact_on_random_cases():
    stream = Stream(77)
    for _ in range(300):
        a0 = stream.uniform(12, -1, 1)
        a1 = stream.uniform(12, -1, 1)
        mu = stream.uniform(4, 0.2, 1.0)
        state = initial_state(CFG, a0)
        _, d = step_dynamics(CFG, state, a1, mu)
        _, dm = step_dynamics(CFG, mirror_state(initial_state(CFG, a0)),
                              mirror_action(a1), mirror_legwise(mu))
        assert d[0] == dm[0] and d[1] == dm[1] and d[2] == dm[2] and d[4] == dm[4]
        assert d[3] == -dm[3] and d[5] == -dm[5]


def test_traction_scaling_exact_for_pow2_factors():
    # scaling all mu by c scales dx and dyaw by exactly c; powers of two keep
    # the float scaling lossless so the equality is bitwise
    stream = Stream(78)
    checked = 0
    while checked < 300:
        a0 = stream.uniform(12, -1, 1)
        a1 = stream.uniform(12, -1, 1)
        mu = stream.uniform(4, 0.4, 1.0)
        c = 0.5 ** (1 + stream.integer(2))
        if np.any(mu * c < 0.2):
            continue
        _, d = step_dynamics(CFG, initial_state(CFG, a0), a1, mu)
        _, dc = step_dynamics(CFG, initial_state(CFG, a0), a1, mu * c)
        assert dc[0] == c * d[0]
        assert dc[5] == c * d[5]
        assert dc[2] == d[2] and dc[3] == d[3] and dc[4] == d[4]
        checked += 1


def test_traction_scaling_approx_for_arbitrary_factors():
    stream = Stream(79)
    for _ in range(100):
        a0 = stream.uniform(12, -1, 1)
        a1 = stream.uniform(12, -1, 1)
        mu = stream.uniform(4, 0.5, 1.0)
        c = stream.uniform(lo=0.4, hi=1.0)
        _, d = step_dynamics(CFG, initial_state(CFG, a0), a1, mu)
        _, dc = step_dynamics(CFG, initial_state(CFG, a0), a1, mu * c)
        assert dc[0] == pytest.approx(c * d[0], rel=1e-12, abs=1e-15)
        assert dc[5] == pytest.approx(c * d[5], rel=1e-12, abs=1e-15)


def test_pose_integration_composes_rigid_transforms():
    # global pose after n steps == independent composition of per-step planar
    # transforms (translate in the frame at step start, then rotate)
    stream = Stream(80)
    state = initial_state(CFG)
    pose = np.eye(3)
    for _ in range(25):
        a = stream.uniform(12, -1, 1)
        mu = stream.uniform(4, 0.2, 1.0)
        state, d = step_dynamics(CFG, state, a, mu)
        trans = np.array([[1, 0, d[0]], [0, 1, d[1]], [0, 0, 1]])
        rot = np.array([[np.cos(d[5]), -np.sin(d[5]), 0],
                        [np.sin(d[5]), np.cos(d[5]), 0], [0, 0, 1]])
        pose = pose @ trans @ rot
        assert state.x == pytest.approx(pose[0, 2], abs=1e-9)
        assert state.y == pytest.approx(pose[1, 2], abs=1e-9)
        assert np.cos(state.yaw) == pytest.approx(pose[0, 0], abs=1e-9)
        assert np.sin(state.yaw) == pytest.approx(pose[1, 0], abs=1e-9)


def test_noise_replay_bit_identical():
    spec = NoiseSpec(joint_sigma=0.01, traction_sigma=0.02)
    a0 = Stream(5).uniform(12, -1, 1)
    a1 = Stream(6).uniform(12, -1, 1)
    mu = Stream(7).uniform(4, 0.2, 1.0)
    _, d1 = step_dynamics(CFG, initial_state(CFG, a0), a1, mu, spec, Stream(999))
    _, d2 = step_dynamics(CFG, initial_state(CFG, a0), a1, mu, spec, Stream(999))
    assert np.array_equal(d1, d2)
    _, d3 = step_dynamics(CFG, initial_state(CFG, a0), a1, mu, spec, Stream(1000))
    assert not np.array_equal(d1, d3)


def test_noise_disabled_requires_no_stream():
    _, d = step_dynamics(CFG, initial_state(CFG, A_PREV), A_TGT, MU_ONE,
                         NoiseSpec.disabled(), None)
    assert np.isfinite(d).all()


def test_matches_independent_scalar_oracle():
    stream = Stream(81)
    for _ in range(100):
        a0 = stream.uniform(12, -1, 1)
        a1 = stream.uniform(12, -1, 1)
        mu = stream.uniform(4, 0.2, 1.0)
        state = initial_state(CFG, a0)
        q_prev = state.q.copy()
        new, d = step_dynamics(CFG, state, a1, mu)
        expect = oracle_step(q_prev, new.q, mu, state.gains)
        assert np.allclose(d, expect, rtol=0, atol=1e-14)


def test_realized_joints_clamped_under_noise():
    spec = NoiseSpec(joint_sigma=0.5, traction_sigma=0.0)
    state = initial_state(CFG, np.array([1.0, 1.0, 1.0] * 4))
    new, _ = step_dynamics(CFG, state, np.array([1.0, 1.0, 1.0] * 4), MU_ONE,
                           spec, Stream(3))
    lo = np.array([-0.6, 0.0, -0.8] * 4)
    hi = np.array([0.6, 1.0, 0.8] * 4)
    assert np.all(new.q >= lo) and np.all(new.q <= hi)
