"""Closed-form stance-stroke dynamics of a 4-legged, 12-joint robot.

One step: the commanded normalized action maps affinely to joint targets,
each leg's traction is friction * stance-weight * stroke * damage-gain, and
the six pose deltas follow in closed form.  The model doubles as the
verification oracle for everything learned downstream, so all arithmetic is
float64 and the per-leg sums are grouped by body side; left/right mirroring
then negates yaw and roll bit-exactly.

Leg order is FL, FR, RL, RR (0..3).  Side tag +1 = left.  +yaw = left turn.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .rng import Stream

LEG_NAMES = ("FL", "FR", "RL", "RR")
LEFT_LEGS = (0, 2)
RIGHT_LEGS = (1, 3)
FRONT_LEGS = (0, 1)
REAR_LEGS = (2, 3)
SIDE_TAG = (1.0, -1.0, 1.0, -1.0)

# joint roles within a leg triple
HIP, LIFT, KNEE = 0, 1, 2

# joint centers used by the sign-flip damage mode (mid-range of each limit)
_JOINT_CENTERS = (0.0, 0.5, 0.0)

MU_MIN, MU_MAX = 0.2, 1.0


class InputError(ValueError):
    """Raised for out-of-range or non-finite inputs."""


@dataclass(frozen=True)
class RobotConfig:
    legs: int = 4
    joints_per_leg: int = 3
    hip_limit: float = 0.6          # theta in [-0.6, 0.6] rad
    lift_range: tuple = (0.0, 1.0)  # phi
    knee_limit: float = 0.8         # psi in [-0.8, 0.8] rad
    l0: float = 0.10
    l1: float = 0.08
    half_width: float = 0.09
    foot_offsets: tuple = ((0.12, 0.09), (0.12, -0.09), (-0.12, 0.09), (-0.12, -0.09))
    body_height: float = 0.16
    variant: int = 0

    def __post_init__(self):
        if self.legs * self.joints_per_leg != 12:
            raise InputError("12 joints required")
        if not 0 <= self.variant <= 3:
            raise InputError(f"variant must be 0..3, got {self.variant}")

    @property
    def action_dim(self) -> int:
        return self.legs * self.joints_per_leg

    @property
    def nominal_height(self) -> float:
        """Standing height of the leg linkage at phi=psi=0."""
        return self.l0 + self.l1


@dataclass
class RobotState:
    q: np.ndarray                     # 12 joint positions, rad
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    gains: np.ndarray = field(default_factory=lambda: np.ones(4))
    stuck_mask: np.ndarray = field(default_factory=lambda: np.zeros(12, dtype=bool))
    stuck_value: np.ndarray = field(default_factory=lambda: np.zeros(12))
    flip_mask: np.ndarray = field(default_factory=lambda: np.zeros(12, dtype=bool))

    def copy(self) -> "RobotState":
        return RobotState(
            q=self.q.copy(), x=self.x, y=self.y, yaw=self.yaw,
            gains=self.gains.copy(), stuck_mask=self.stuck_mask.copy(),
            stuck_value=self.stuck_value.copy(), flip_mask=self.flip_mask.copy(),
        )


@dataclass(frozen=True)
class NoiseSpec:
    """Actuation noise: joint position sigma (rad), relative traction sigma."""
    joint_sigma: float = 0.01
    traction_sigma: float = 0.02
    friction_randomization: bool = True

    @staticmethod
    def disabled() -> "NoiseSpec":
        return NoiseSpec(0.0, 0.0, False)

    @property
    def enabled(self) -> bool:
        return self.joint_sigma > 0 or self.traction_sigma > 0


@dataclass(frozen=True)
class DamageMode:
    """kind in {broken_endlink, stuck_joint, sign_flip}; joint is a role index 0..2."""
    kind: str
    leg: int
    joint: int = 0
    gain: float = 0.25


NEUTRAL_ACTION = np.array([0.0, -1.0, 0.0] * 4)  # feet planted, hips centered


def initial_state(config: RobotConfig, action: np.ndarray | None = None) -> RobotState:
    a = NEUTRAL_ACTION if action is None else np.asarray(action, dtype=np.float64)
    return RobotState(q=map_action(config, a))


def map_action(config: RobotConfig, action: np.ndarray) -> np.ndarray:
    """Normalized action in [-1,1]^12 -> joint targets in radians.

    theta = 0.6*a, phi = 0.5*(a+1), psi = 0.8*a, after the variant role remap.
    """
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (12,):
        raise InputError(f"action must have 12 components, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError("action has non-finite components")
    if np.any(np.abs(a) > 1.0 + 1e-12):
        raise InputError("action components must lie in [-1, 1]")
    a = remap_variant(config, a)
    q = np.empty(12)
    for leg in range(4):
        b = 3 * leg
        q[b + HIP] = config.hip_limit * a[b + HIP]
        lo, hi = config.lift_range
        q[b + LIFT] = lo + 0.5 * (a[b + LIFT] + 1.0) * (hi - lo)
        q[b + KNEE] = config.knee_limit * a[b + KNEE]
    return q


def remap_variant(config: RobotConfig, action: np.ndarray) -> np.ndarray:
    """Reroute which action components drive which joint roles.

    variant 0: identity.
    variant 1: within each leg, the lift and knee channels trade roles.
    variant 2: the hip channel is negated on right legs.
    variant 3: roles rotate hip->lift->knee->hip within each leg.
    """
    a = np.asarray(action, dtype=np.float64)
    if config.variant == 0:
        return a.copy()
    out = a.copy()
    if config.variant == 1:
        for leg in range(4):
            b = 3 * leg
            out[b + LIFT], out[b + KNEE] = a[b + KNEE], a[b + LIFT]
    elif config.variant == 2:
        for leg in RIGHT_LEGS:
            out[3 * leg + HIP] = -a[3 * leg + HIP]
    elif config.variant == 3:
        for leg in range(4):
            b = 3 * leg
            # the component that drove the hip now drives the lift, etc.
            out[b + LIFT] = a[b + HIP]
            out[b + KNEE] = a[b + LIFT]
            out[b + HIP] = a[b + KNEE]
    return out


def _clamp_joints(config: RobotConfig, q: np.ndarray) -> np.ndarray:
    lo = np.array([-config.hip_limit, config.lift_range[0], -config.knee_limit] * 4)
    hi = np.array([config.hip_limit, config.lift_range[1], config.knee_limit] * 4)
    return np.clip(q, lo, hi)


def _pair_sum(values, legs_a, legs_b) -> float:
    """Sum over legs grouped as (pair a) + (pair b); grouping keeps the
    left/right mirror exact in floating point."""
    return (values[legs_a[0]] + values[legs_a[1]]) + (values[legs_b[0]] + values[legs_b[1]])


def height_of(config: RobotConfig, q: np.ndarray) -> float:
    per_leg = [
        (config.l0 + config.l1 * np.cos(q[3 * i + KNEE])) * np.cos(q[3 * i + LIFT])
        for i in range(4)
    ]
    return _pair_sum(per_leg, LEFT_LEGS, RIGHT_LEGS) / 4.0


def pitch_of(config: RobotConfig, q: np.ndarray) -> float:
    front = (q[3 * FRONT_LEGS[0] + LIFT] + q[3 * FRONT_LEGS[1] + LIFT]) / 2.0
    rear = (q[3 * REAR_LEGS[0] + LIFT] + q[3 * REAR_LEGS[1] + LIFT]) / 2.0
    return 0.5 * (front - rear)


def roll_of(config: RobotConfig, q: np.ndarray) -> float:
    left = (q[3 * LEFT_LEGS[0] + LIFT] + q[3 * LEFT_LEGS[1] + LIFT]) / 2.0
    right = (q[3 * RIGHT_LEGS[0] + LIFT] + q[3 * RIGHT_LEGS[1] + LIFT]) / 2.0
    return 0.5 * (left - right)


def body_attitude(config: RobotConfig, state: RobotState) -> tuple:
    """(x, y, camera height, yaw, pitch, roll) for the renderer."""
    h = config.body_height + (height_of(config, state.q) - config.nominal_height)
    return (state.x, state.y, h,
            state.yaw, pitch_of(config, state.q), roll_of(config, state.q))


def realized_joints(
    config: RobotConfig,
    state: RobotState,
    action: np.ndarray,
    noise: NoiseSpec,
    stream: Stream | None = None,
) -> np.ndarray:
    """Joint positions actually reached: command map, damage, then noise.

    Noise draw order (for replay): 12 joint gaussians, 4 traction gaussians,
    1 lateral gaussian; the latter five are consumed by step_dynamics.
    """
    q_tgt = map_action(config, action)
    flip = state.flip_mask
    if flip.any():
        centers = np.array(_JOINT_CENTERS * 4)
        q_tgt = np.where(flip, 2.0 * centers - q_tgt, q_tgt)
    if noise.joint_sigma > 0:
        if stream is None:
            raise InputError("noise enabled but no stream supplied")
        q_tgt = q_tgt + stream.gaussian(12, noise.joint_sigma)
        q_tgt = _clamp_joints(config, q_tgt)
    elif stream is not None:
        stream.gaussian(12)  # keep the draw order fixed whether or not sigma>0
    stuck = state.stuck_mask
    if stuck.any():
        q_tgt = np.where(stuck, state.stuck_value, q_tgt)
    return q_tgt


def step_dynamics(
    config: RobotConfig,
    state: RobotState,
    action: np.ndarray,
    friction: np.ndarray,
    noise: NoiseSpec = NoiseSpec.disabled(),
    stream: Stream | None = None,
) -> tuple:
    """Advance one step; returns (new_state, delta) with delta the 6-vector
    (dx, dy, dz, droll, dpitch, dyaw) in the robot frame at step start."""
    mu = np.asarray(friction, dtype=np.float64)
    if mu.shape != (4,):
        raise InputError("friction must be a 4-vector")
    if np.any(mu < MU_MIN - 1e-12) or np.any(mu > MU_MAX + 1e-12):
        raise InputError(f"friction components must lie in [{MU_MIN}, {MU_MAX}]")
    if not np.all(np.isfinite(state.q)):
        raise InputError("state has non-finite joints")

    q_prev = state.q
    q_real = realized_joints(config, state, action, noise, stream)

    traction = np.empty(4)
    for i in range(4):
        b = 3 * i
        psi_bar = 0.5 * (q_prev[b + KNEE] + q_real[b + KNEE])
        phi_bar = 0.5 * (q_prev[b + LIFT] + q_real[b + LIFT])
        l_eff = config.l0 + config.l1 * np.cos(psi_bar)
        stance = max(0.0, np.cos(phi_bar)) ** 2
        stroke = (q_prev[b + HIP] - q_real[b + HIP]) * l_eff
        traction[i] = mu[i] * stance * stroke * state.gains[i]
    if noise.traction_sigma > 0:
        traction = traction * (1.0 + stream.gaussian(4, noise.traction_sigma))
    elif stream is not None:
        stream.gaussian(4)

    left_sum = traction[LEFT_LEGS[0]] + traction[LEFT_LEGS[1]]
    right_sum = traction[RIGHT_LEGS[0]] + traction[RIGHT_LEGS[1]]
    dx = (left_sum + right_sum) / 4.0
    dyaw = (right_sum - left_sum) / (4.0 * config.half_width)

    dy = 0.0
    if noise.traction_sigma > 0:
        activity = (abs(traction[0]) + abs(traction[2])) + (abs(traction[1]) + abs(traction[3]))
        dy = noise.traction_sigma * stream.gaussian() * activity / 4.0  # lateral slip
    elif stream is not None:
        stream.gaussian()

    dz = height_of(config, q_real) - height_of(config, q_prev)
    dpitch = pitch_of(config, q_real) - pitch_of(config, q_prev)
    droll = roll_of(config, q_real) - roll_of(config, q_prev)

    new = state.copy()
    new.q = q_real
    c, s = np.cos(state.yaw), np.sin(state.yaw)
    new.x = state.x + dx * c - dy * s
    new.y = state.y + dx * s + dy * c
    new.yaw = state.yaw + dyaw
    delta = np.array([dx, dy, dz, droll, dpitch, dyaw])
    return new, delta


def apply_damage(state: RobotState, mode: DamageMode) -> RobotState:
    """Return a damaged copy of the state; the original is untouched."""
    if not 0 <= mode.leg < 4:
        raise InputError(f"invalid leg index {mode.leg}")
    new = state.copy()
    if mode.kind == "broken_endlink":
        new.gains[mode.leg] = mode.gain
    elif mode.kind == "stuck_joint":
        if not 0 <= mode.joint < 3:
            raise InputError(f"invalid joint index {mode.joint}")
        j = 3 * mode.leg + mode.joint
        new.stuck_mask[j] = True
        new.stuck_value[j] = state.q[j]
    elif mode.kind == "sign_flip":
        if not 0 <= mode.joint < 3:
            raise InputError(f"invalid joint index {mode.joint}")
        new.flip_mask[3 * mode.leg + mode.joint] = True
    else:
        raise InputError(f"unknown damage kind {mode.kind!r}")
    return new


def mirror_action(action: np.ndarray) -> np.ndarray:
    """Swap the per-leg action triples between body sides (FL<->FR, RL<->RR)."""
    a = np.asarray(action, dtype=np.float64).copy()
    for left, right in zip(LEFT_LEGS, RIGHT_LEGS):
        l, r = 3 * left, 3 * right
        a[[l, l + 1, l + 2, r, r + 1, r + 2]] = a[[r, r + 1, r + 2, l, l + 1, l + 2]]
    return a


def mirror_legwise(values: np.ndarray) -> np.ndarray:
    """Swap per-leg scalars between body sides."""
    v = np.asarray(values, dtype=np.float64).copy()
    v[[0, 1, 2, 3]] = v[[1, 0, 3, 2]]
    return v


def mirror_state(state: RobotState) -> RobotState:
    new = state.copy()
    perm = [3, 4, 5, 0, 1, 2, 9, 10, 11, 6, 7, 8]
    new.q = state.q[perm]
    new.gains = mirror_legwise(state.gains)
    new.stuck_mask = state.stuck_mask[perm]
    new.stuck_value = state.stuck_value[perm]
    new.flip_mask = state.flip_mask[perm]
    return new
