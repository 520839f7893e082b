"""Anomaly detection and autonomous recovery.

The monitor compares what the self-model predicted for the executed action
against what the visual-odometry model measured from the frames, normalizes
the per-dimension gap by the training-label standard deviations, smooths with
an EWMA, and raises a sticky alarm past a threshold calibrated on nominal
(undamaged) rollouts.

Recovery re-trains the self-model from babbling data collected on the damaged
robot, labeled *only* by the VO model; simulator ground truth never reaches
the labels.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import planner
from .dataio import CollectSpec, Dataset, SimEnv, collect
from .rng import Stream
from .selfmodel import SelfModel, build_pairs, train, vo_windows


class MonitorError(RuntimeError):
    pass


@dataclass
class DiscrepancyMonitor:
    """Per-step discrepancy D = mean_i |pred_i - vo_i| / std_i, EWMA-smoothed."""
    stds: np.ndarray
    alpha: float = 0.2
    tau: float | None = None
    ewma: float | None = None
    alarmed: bool = False

    def reset(self):
        self.ewma = None
        self.alarmed = False

    def discrepancy(self, pred: np.ndarray, vo: np.ndarray) -> float:
        gap = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(vo, dtype=np.float64))
        return float(np.mean(gap / self.stds))

    def step(self, pred: np.ndarray, vo: np.ndarray) -> tuple:
        """Returns (D_t, ewma, alarm); the alarm is sticky until reset()."""
        if self.tau is None:
            raise MonitorError("monitor not calibrated")
        d = self.discrepancy(pred, vo)
        self.ewma = d if self.ewma is None else (1.0 - self.alpha) * self.ewma + self.alpha * d
        if self.ewma > self.tau:
            self.alarmed = True
        return d, self.ewma, self.alarmed


def calibrate(monitor: DiscrepancyMonitor, nominal_discrepancies: np.ndarray,
              n_sigma: float = 4.0) -> float:
    """tau = mean + n_sigma * std of per-step D over nominal rollouts."""
    d = np.asarray(nominal_discrepancies, dtype=np.float64)
    if len(d) == 0:
        raise MonitorError("cannot calibrate on an empty trace")
    monitor.tau = float(d.mean() + n_sigma * d.std())
    return monitor.tau


def vo_measure(vo_model: SelfModel, frames_prev: np.ndarray,
               frames_cur: np.ndarray) -> np.ndarray:
    """VO estimate of the current step's delta from a 7-frame window."""
    window = np.concatenate([frames_prev[3:5], frames_cur], axis=0)
    return vo_model.predict(window[None], None)[0]


@dataclass
class MonitoredRollout:
    log: planner.RolloutLog
    d: np.ndarray            # per-step discrepancy (step 0 unmonitored: nan)
    ewma: np.ndarray
    alarm: np.ndarray        # sticky alarm flag per step
    alarm_step: int          # first alarmed step, -1 if never


def run_monitored_rollout(env: SimEnv, model: SelfModel, vo_model: SelfModel,
                          monitor: DiscrepancyMonitor, task: planner.TaskSpec, *,
                          steps: int = 56, n_candidates: int = 100,
                          seed: int = 0) -> MonitoredRollout:
    """MPC rollout with the monitor fed each step's (prediction, VO) pair.

    Step 0 is the unplanned warm-up (no prediction, no preceding frames), so
    monitoring starts at step 1.
    """
    monitor.reset()
    root = Stream(seed).substream("rollout")
    gen = planner.GaitGenerator()
    T = steps
    log = planner.RolloutLog(
        actions=np.zeros((T, 12)), predicted=np.zeros((T, 6)),
        realized=np.zeros((T, 6)), rewards=np.zeros(T), poses=np.zeros((T, 3)),
        frames=np.zeros((T, env.camera.frames_per_step, env.camera.size,
                         env.camera.size), dtype=np.uint8))
    d = np.full(T, np.nan)
    ewma = np.full(T, np.nan)
    alarm = np.zeros(T, dtype=bool)
    phase = 0.0
    heading_est = 0.0
    frames_prev = None
    alarm_step = -1
    for k in range(T):
        if k == 0:
            action = gen.action_at(gen.nominal, phase + gen.nominal.dphase)
            phase += gen.nominal.dphase
            sel = None
        else:
            cands = planner.propose(gen, phase, n_candidates,
                                    root.substream(("propose", k)))
            sel = planner.select(model, frames_prev, cands, task, heading_est)
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
        if sel is not None:
            vo = vo_measure(vo_model, frames_prev, frames)
            d[k], ewma[k], alarmed = monitor.step(sel.predicted, vo)
            if alarmed and alarm_step < 0:
                alarm_step = k
            alarm[k] = alarmed
        frames_prev = frames
    return MonitoredRollout(log, d, ewma, alarm, alarm_step)


@dataclass
class RecoveryReport:
    success: bool
    steps_used: int
    final_discrepancy: float
    alarm_after: bool
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "success": self.success,
            "steps_used": self.steps_used,
            "final_discrepancy": self.final_discrepancy,
            "alarm_after": self.alarm_after,
        }
        payload.update(self.details)
        return json.dumps(payload, sort_keys=True, indent=2)


def vo_labeled_dataset(dataset: Dataset, vo_model: SelfModel,
                       batch: int = 256) -> Dataset:
    """Replace dynamics labels with VO measurements.

    Only records reachable as training targets (step > 0) get VO labels; the
    simulator's deltas are wiped everywhere so no ground truth can leak into
    retraining.
    """
    pairs = build_pairs(dataset)
    out = dataset.subset(dataset.episode_ids)  # deep-ish copy via mask
    out.deltas = np.zeros_like(dataset.deltas)
    for lo in range(0, len(pairs), batch):
        sel = np.arange(lo, min(lo + batch, len(pairs)))
        windows = vo_windows(dataset, pairs.frame_idx[sel], pairs.target_idx[sel])
        vo = vo_model.predict(windows, None)
        out.deltas[pairs.target_idx[sel]] = vo.astype(np.float32)
    return out


def recover(collect_spec: CollectSpec, model: SelfModel, vo_model: SelfModel,
            monitor: DiscrepancyMonitor, *, budget: int, seed: int = 0,
            epochs: int = 10, task: planner.TaskSpec | None = None,
            validation_texture=None, n_candidates: int = 100) -> tuple:
    """Collect `budget` babbling steps on the damaged robot, retrain the
    self-model on VO labels, and validate on a fresh damaged rollout.

    Returns (recovered model, RecoveryReport).  The input model object is
    never mutated; the VO model is never trained.
    """
    from .dataio import split_dataset

    if budget <= 0:
        report = RecoveryReport(False, 0, float("inf"), True,
                                {"reason": "empty babbling budget"})
        return model, report

    raw = collect(collect_spec, budget, seed)
    labeled = vo_labeled_dataset(raw, vo_model)
    train_set, val_set, _ = split_dataset(labeled, seed=seed)

    recovered = SelfModel(model.kind, seed=model.seed, stats=model.stats)
    recovered.load_state(model.state_dict())
    train(recovered, train_set, val_set, epochs=epochs, seed=seed)

    task = task or planner.TaskSpec("forward")
    texture = validation_texture if validation_texture is not None else collect_spec.textures[0]
    env = SimEnv(collect_spec.config, texture, collect_spec.camera,
                 damage=collect_spec.damage)
    check = run_monitored_rollout(env, recovered, vo_model, monitor, task,
                                  n_candidates=n_candidates, seed=seed + 1)
    valid = ~np.isnan(check.d)
    final_d = float(np.nanmean(check.d)) if valid.any() else float("inf")
    success = not check.alarm.any()
    report = RecoveryReport(success, len(raw), final_d, bool(check.alarm.any()),
                            {"mean_ewma": float(np.nanmean(check.ewma))})
    return recovered, report
