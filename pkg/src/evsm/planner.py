"""Sampling-based model-predictive control over a trot-gait action family.

Each control step proposes N candidate actions by drawing gait parameters
uniformly within their safe ranges, batch-predicts the outcome of every
candidate with the self-model, scores them with the task reward, and executes
the argmax (first index wins ties).  Open-loop sinusoidal and nominal-gait
baselines run through the same loop with a single candidate and no model.

Because the robot has no global heading sensor, forward/backward tasks
regulate heading by dead reckoning: the planner integrates the *predicted*
yaw of the executed actions and penalizes candidates that would enlarge the
estimated deviation.  With an accurate self-model this keeps rollouts
straight; with a mispredicting model the estimate (and the robot) drifts,
which is exactly what the damage experiments exercise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import simcore
from .dataio import SimEnv
from .rng import Stream

TROT_OFFSETS = (0.0, np.pi, np.pi, 0.0)  # FL, FR, RL, RR; diagonal pairs in phase

HIP_AMP_RANGE = (0.2, 0.6)
LIFT_AMP_RANGE = (0.2, 0.8)
HIP_BIAS_RANGE = (-0.3, 0.3)
PHASE_STEP_RANGE = (0.2 * np.pi, 0.6 * np.pi)
KNEE_COUPLE_RANGE = (0.0, 0.5)

# componentwise action envelope implied by the parameter ranges above
ENVELOPE_LO = np.array([-0.9, -1.0, -0.5] * 4)
ENVELOPE_HI = np.array([0.9, 0.6, 0.0] * 4)

TASKS = ("forward", "backward", "turn_left", "turn_right")


def clip_to_envelope(action: np.ndarray) -> np.ndarray:
    """Clamp a raw action into the gait generator's safe exploration range."""
    return np.clip(action, ENVELOPE_LO, ENVELOPE_HI)


@dataclass(frozen=True)
class GaitParams:
    """One parameterization of the trot family; per-side hip amplitudes make
    differential steering expressible, direction=-1 plants the legs on the
    opposite half of the cycle so the same sweep walks backward."""
    amp_hip_left: float = 0.4
    amp_hip_right: float = 0.4
    amp_lift: float = 0.6
    bias_hip: float = 0.0
    dphase: float = 0.4 * np.pi
    knee_couple: float = 0.25
    direction: float = 1.0


@dataclass(frozen=True)
class GaitGenerator:
    offsets: tuple = TROT_OFFSETS
    nominal: GaitParams = GaitParams()

    def action_at(self, params: GaitParams, phase: float) -> np.ndarray:
        a = np.empty(12)
        for leg in range(4):
            rho = phase + self.offsets[leg]
            lift01 = max(0.0, -params.direction * np.sin(rho))
            amp = params.amp_hip_left if leg in simcore.LEFT_LEGS else params.amp_hip_right
            a[3 * leg + 0] = params.bias_hip + amp * np.cos(rho)
            a[3 * leg + 1] = 2.0 * params.amp_lift * lift01 - 1.0
            a[3 * leg + 2] = -params.knee_couple * lift01
        return a

    def sample_params(self, stream: Stream) -> GaitParams:
        def draw(lo, hi):
            return stream.uniform(lo=lo, hi=hi)
        return GaitParams(
            amp_hip_left=draw(*HIP_AMP_RANGE),
            amp_hip_right=draw(*HIP_AMP_RANGE),
            amp_lift=draw(*LIFT_AMP_RANGE),
            bias_hip=draw(*HIP_BIAS_RANGE),
            dphase=draw(*PHASE_STEP_RANGE),
            knee_couple=draw(*KNEE_COUPLE_RANGE),
            direction=1.0 if stream.uniform() < 0.5 else -1.0,
        )

    def continue_action(self, params: GaitParams, phase_from: float,
                        phase_to: float, prev_action: np.ndarray) -> np.ndarray:
        """Next action continuing the cycle from the current hip positions.

        Hips advance by the amplitude-scaled phase increment instead of
        jumping to the new parameters' absolute sine track, so changing
        parameters mid-gait never teleports a hip (one-step reward cannot be
        gamed by a positional jump that the next step pays back).  Lift and
        knee are phase-tied as in action_at.
        """
        a = np.empty(12)
        for leg in range(4):
            off = self.offsets[leg]
            amp = params.amp_hip_left if leg in simcore.LEFT_LEGS else params.amp_hip_right
            dcos = np.cos(phase_to + off) - np.cos(phase_from + off)
            hip = prev_action[3 * leg + 0] + amp * dcos
            a[3 * leg + 0] = min(0.9, max(-0.9, hip))
            rho = phase_to + off
            lift01 = max(0.0, -params.direction * np.sin(rho))
            a[3 * leg + 1] = 2.0 * params.amp_lift * lift01 - 1.0
            a[3 * leg + 2] = -params.knee_couple * lift01
        return a

    def task_params(self, task: str, stream: Stream) -> GaitParams:
        """Random gait parameters biased toward executing one task; used by
        the prediction-error evaluation protocol."""
        def draw(lo, hi):
            return stream.uniform(lo=lo, hi=hi)
        amp_l = amp_r = draw(*HIP_AMP_RANGE)
        direction = 1.0
        if task == "backward":
            direction = -1.0
        elif task == "turn_left":
            amp_l, amp_r = draw(0.2, 0.35), draw(0.45, 0.6)
        elif task == "turn_right":
            amp_l, amp_r = draw(0.45, 0.6), draw(0.2, 0.35)
        return GaitParams(
            amp_hip_left=amp_l, amp_hip_right=amp_r,
            amp_lift=draw(*LIFT_AMP_RANGE),
            bias_hip=draw(-0.1, 0.1),
            dphase=draw(*PHASE_STEP_RANGE),
            knee_couple=draw(*KNEE_COUPLE_RANGE),
            direction=direction,
        )


@dataclass
class Candidate:
    params: GaitParams
    action: np.ndarray


def propose(gen: GaitGenerator, phase: float, n: int, stream: Stream,
            perturb: bool = True) -> list:
    """N candidate actions, each a fresh parameter draw evaluated one phase
    increment ahead; with perturb=False the nominal gait's next action."""
    if n < 1:
        raise ValueError("need at least one candidate")
    out = []
    for i in range(n):
        params = gen.sample_params(stream.substream(i)) if perturb else gen.nominal
        out.append(Candidate(params, gen.action_at(params, phase + params.dphase)))
    return out


@dataclass(frozen=True)
class TaskSpec:
    """Reward over a predicted delta; pure function of the prediction (plus
    the planner's dead-reckoned heading for the straight-line tasks)."""
    task: str
    stability_weight: float = 0.1
    heading_weight: float = 0.5

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")

    def reward(self, pred: np.ndarray, heading: float = 0.0) -> np.ndarray:
        pred = np.atleast_2d(pred)
        stability = self.stability_weight * (np.abs(pred[:, 3]) + np.abs(pred[:, 4]))
        if self.task == "forward":
            base = pred[:, 0] - self.heading_weight * np.abs(heading + pred[:, 5])
        elif self.task == "backward":
            base = -pred[:, 0] - self.heading_weight * np.abs(heading + pred[:, 5])
        elif self.task == "turn_left":
            base = pred[:, 5]
        else:
            base = -pred[:, 5]
        return base - stability


class OracleModel:
    """Drop-in for a learned model: answers candidate queries with the
    closed-form simulator from the environment's true state."""

    kind = "oracle"

    def __init__(self, env: SimEnv):
        self.env = env

    def predict(self, frames, actions: np.ndarray) -> np.ndarray:
        actions = np.atleast_2d(actions)
        out = np.empty((len(actions), 6))
        mu = self.env.foot_friction()
        for i, a in enumerate(actions):
            _, out[i] = simcore.step_dynamics(
                self.env.config, self.env.state, np.asarray(a, dtype=np.float64), mu,
                simcore.NoiseSpec.disabled(), None)
        return out


@dataclass
class Selection:
    index: int
    action: np.ndarray
    predicted: np.ndarray
    rewards: np.ndarray


def select(model, frames: np.ndarray | None, candidates: list, task: TaskSpec,
           heading: float = 0.0) -> Selection:
    """Batch-predict all candidates, reward them, return the argmax (ties to
    the lowest index).  Predictions are bit-identical to per-candidate calls."""
    if not candidates:
        raise ValueError("empty candidate set")
    actions = np.stack([c.action for c in candidates]).astype(np.float32)
    if frames is not None:
        frames = np.broadcast_to(
            frames[None], (len(candidates),) + frames.shape)
    preds = model.predict(frames, actions)
    rewards = task.reward(preds, heading)
    idx = int(np.argmax(rewards))
    return Selection(idx, candidates[idx].action, preds[idx], rewards)


@dataclass
class RolloutLog:
    actions: np.ndarray      # (T, 12)
    predicted: np.ndarray    # (T, 6)
    realized: np.ndarray     # (T, 6)
    rewards: np.ndarray      # (T,)
    poses: np.ndarray        # (T, 3) x, y, yaw after each step
    frames: np.ndarray       # (T, 5, 32, 32) frames rendered during each step

    @property
    def net_forward(self) -> float:
        """Displacement along the initial heading (episodes start at yaw 0)."""
        return float(self.poses[-1, 0])

    @property
    def heading_change(self) -> float:
        return float(self.poses[-1, 2])


def rollout(env: SimEnv, model, task: TaskSpec, *, steps: int = 56,
            n_candidates: int = 100, seed: int = 0,
            gen: GaitGenerator = GaitGenerator(), mode: str = "mpc") -> RolloutLog:
    """Closed loop render -> propose -> select -> step.

    mode "mpc": full candidate search scored by the model.
    mode "gait": the nominal gait executed open loop (single candidate, no model).
    mode "sinusoidal": planted sinusoidal hip sweep, no lift asymmetry.

    Step 0 is a warm-up: the nominal action executes unplanned so the planner
    has a real frame sequence from step 1 on.
    """
    if mode not in ("mpc", "gait", "sinusoidal"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    root = Stream(seed).substream("rollout")
    T = steps
    log = RolloutLog(
        actions=np.zeros((T, 12)), predicted=np.zeros((T, 6)),
        realized=np.zeros((T, 6)), rewards=np.zeros(T), poses=np.zeros((T, 3)),
        frames=np.zeros((T, env.camera.frames_per_step, env.camera.size,
                         env.camera.size), dtype=np.uint8),
    )
    phase = 0.0
    heading_est = 0.0
    frames_prev = None
    for k in range(T):
        if mode == "sinusoidal":
            action = _sinusoidal_action(gen, phase + gen.nominal.dphase)
            phase += gen.nominal.dphase
        elif mode == "gait" or k == 0:
            action = gen.action_at(gen.nominal, phase + gen.nominal.dphase)
            phase += gen.nominal.dphase
        else:
            cands = propose(gen, phase, n_candidates, root.substream(("propose", k)))
            sel = select(model, frames_prev, cands, task, heading_est)
            action = sel.action
            phase += cands[sel.index].params.dphase
            heading_est += float(sel.predicted[5])
            log.predicted[k] = sel.predicted
            log.rewards[k] = sel.rewards[sel.index]
        delta, frames, _ = env.step(action)
        log.actions[k] = action
        log.realized[k] = delta
        log.poses[k] = (env.state.x, env.state.y, env.state.yaw)
        log.frames[k] = frames
        frames_prev = frames
    return log


def _sinusoidal_action(gen: GaitGenerator, phase: float) -> np.ndarray:
    a = np.empty(12)
    for leg in range(4):
        rho = phase + gen.offsets[leg]
        a[3 * leg + 0] = gen.nominal.amp_hip_left * np.cos(rho)
        a[3 * leg + 1] = -1.0
        a[3 * leg + 2] = 0.0
    return a
