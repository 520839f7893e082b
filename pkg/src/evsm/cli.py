"""Command-line entry point: reproducible experiments over all modules.

Every command requires an explicit --seed and emits files that embed the
config hash and seed; rerunning a command with the same inputs produces
byte-identical outputs.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import planner, resilience
from .config import ExperimentConfig, load_config
from .dataio import (
    CollectSpec,
    SimEnv,
    collect,
    compute_stats,
    load_dataset,
    parse_damage,
    save_dataset,
    split_dataset,
)
from .render import CameraSpec, write_pgm
from .rng import Stream
from .selfmodel import (
    IMU_NOISE_SIGMA,
    SelfModel,
    load_model,
    save_model,
    train,
    transfer,
)


def _open_csv(path, header: str, cfg: ExperimentConfig, seed: int):
    fh = open(path, "w", encoding="ascii")
    fh.write(f"# config_hash={cfg.hash()} seed={seed}\n")
    fh.write(header + "\n")
    return fh


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _row(fh, *values):
    fh.write(",".join(_fmt(v) for v in values) + "\n")


# ---------------------------------------------------------------------------
# task episodes: the shared evaluation protocol


def task_episodes(cfg: ExperimentConfig, texture_kind: str, task_name: str,
                  n_episodes: int, seed: int, variant: int | None = None,
                  damage: str | None = None) -> list:
    """Held-out episodes executing a task with randomized gait parameters.

    Each step draws fresh parameters from a task-biased prior (no model in
    the loop), so the trajectories are model-independent and keep the state
    diversity a prediction-error comparison needs.
    """
    episodes = []
    gen = planner.GaitGenerator()
    root = Stream(seed).substream(("eval", task_name, texture_kind))
    tex_index = (cfg.textures.index(texture_kind)
                 if texture_kind in cfg.textures else len(cfg.textures))
    base = cfg.texture(texture_kind, tex_index)
    for ep in range(n_episodes):
        ep_stream = root.substream(("episode", ep))
        texture = base.with_transform(ep_stream.substream("texture"))
        env = SimEnv(cfg.robot_config(variant), texture, CameraSpec(),
                     noise=cfg.noise_spec(), damage=parse_damage(damage or "none"),
                     noise_seed=int(ep_stream.substream("noise").seed))
        T = cfg.rollout_steps
        log = planner.RolloutLog(
            actions=np.zeros((T, 12)), predicted=np.zeros((T, 6)),
            realized=np.zeros((T, 6)), rewards=np.zeros(T), poses=np.zeros((T, 3)),
            frames=np.zeros((T, 5, 32, 32), dtype=np.uint8))
        policy_stream = ep_stream.substream("policy")
        phase = 0.0
        for k in range(T):
            params = gen.task_params(task_name, policy_stream.substream(k))
            phase += params.dphase
            action = gen.action_at(params, phase)
            delta, frames, _ = env.step(action)
            log.actions[k] = action
            log.realized[k] = delta
            log.poses[k] = (env.state.x, env.state.y, env.state.yaw)
            log.frames[k] = frames
        episodes.append(log)
    return episodes


def episode_mse(model: SelfModel, log: planner.RolloutLog, eval_stats,
                imu_seed: int = 0) -> float:
    """Normalized prediction MSE of one model over one episode's steps 1..T-1."""
    T = len(log.actions)
    frames_in, actions, imu = [], [], []
    targets = []
    for k in range(1, T):
        if model.kind == "vo":
            frames_in.append(np.concatenate([log.frames[k - 1][3:5], log.frames[k]]))
        elif model.kind == "vision":
            frames_in.append(log.frames[k - 1])
        actions.append(log.actions[k])
        targets.append(log.realized[k])
        if model.kind == "imu":
            imu.append(eval_stats.normalize(log.realized[k - 1]))
    frames = np.stack(frames_in).astype(np.uint8) if frames_in else None
    acts = np.stack(actions).astype(np.float32) if model.kind != "vo" else None
    m = None
    if model.kind == "imu":
        noise = Stream(imu_seed).substream("eval_imu").gaussian(
            len(imu) * 6, IMU_NOISE_SIGMA).reshape(len(imu), 6)
        m = (np.stack(imu) + noise).astype(np.float32)
    pred = model.predict(frames, acts, m)
    err = (pred - np.stack(targets)) / eval_stats.std
    return float(np.mean(err**2))


# ---------------------------------------------------------------------------
# commands


def cmd_collect(args, cfg: ExperimentConfig) -> int:
    spec = cfg.collect_spec()
    n_steps = cfg.steps_per_texture * len(cfg.textures)
    if args.steps:
        n_steps = args.steps
    dataset = collect(spec, n_steps, args.seed)
    dataset.manifest["config_hash"] = cfg.hash()
    os.makedirs(args.out, exist_ok=True)
    save_dataset(dataset, args.out)
    print(f"collected {len(dataset)} records "
          f"({dataset.manifest['n_episodes']} episodes) -> {args.out}")
    return 0


def _train_one(cfg, args, kind: str) -> int:
    dataset = load_dataset(args.data)
    train_set, val_set, test_set = split_dataset(dataset, seed=args.seed)
    stats = compute_stats(train_set.deltas)
    model = SelfModel(kind, seed=args.seed, stats=stats)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, f"train_{kind}.csv")
    result = train(model, train_set, val_set, epochs=cfg.epochs, batch=cfg.batch,
                   seed=args.seed, lr=cfg.lr, plateau_factor=cfg.plateau_factor,
                   plateau_patience=cfg.plateau_patience, csv_path=csv_path)
    _prepend_hash(csv_path, cfg, args.seed)
    ckpt = os.path.join(args.out, f"model_{kind}")
    save_model(model, ckpt)
    from .selfmodel import evaluate_mse
    test_mse = evaluate_mse(model, test_set)
    print(f"{kind}: best val {result.best_val:.6f} (epoch {result.best_epoch}), "
          f"test {test_mse:.6f} -> {ckpt}")
    return 0


def _prepend_hash(path, cfg, seed):
    with open(path, "r", encoding="ascii") as fh:
        body = fh.read()
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# config_hash={cfg.hash()} seed={seed}\n" + body)


def cmd_train(args, cfg) -> int:
    return _train_one(cfg, args, args.model)


def cmd_train_vo(args, cfg) -> int:
    return _train_one(cfg, args, "vo")


def cmd_eval(args, cfg) -> int:
    models = {}
    for path in args.models.split(","):
        model = load_model(path)
        models[model.kind] = model
    eval_stats = next(iter(models.values())).stats
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "eval.csv")
    fh = _open_csv(out_path, "model,task,texture,mse_mean,mse_std", cfg, args.seed)
    textures = list(cfg.textures)
    if args.include_heldout:
        textures.append(cfg.heldout_texture)
    for task_name in cfg.tasks:
        for kind_i, texture_kind in enumerate(textures):
            episodes = task_episodes(cfg, texture_kind, task_name,
                                     cfg.eval_episodes, args.seed)
            for name, model in models.items():
                mses = [episode_mse(model, log, eval_stats,
                                    imu_seed=args.seed + 31 * i)
                        for i, log in enumerate(episodes)]
                _row(fh, name, task_name, texture_kind,
                     float(np.mean(mses)), float(np.std(mses)))
    fh.close()
    print(f"eval table -> {out_path}")
    return 0


def cmd_rollout(args, cfg) -> int:
    task = planner.TaskSpec(args.task, cfg.stability_weight, cfg.heading_weight)
    os.makedirs(args.out, exist_ok=True)
    texture_kind = args.texture or cfg.textures[0]
    tex_index = (cfg.textures.index(texture_kind)
                 if texture_kind in cfg.textures else len(cfg.textures))
    model = None
    if args.mode == "mpc" and not args.oracle:
        model = load_model(args.model)
    root = Stream(args.seed).substream(("rollout_cmd", args.task, texture_kind))
    summary = _open_csv(os.path.join(args.out, "summary.csv"),
                        "episode,net_forward,heading_change", cfg, args.seed)
    for ep in range(args.episodes):
        ep_stream = root.substream(("episode", ep))
        texture = cfg.texture(texture_kind, tex_index).with_transform(
            ep_stream.substream("texture"))
        env = SimEnv(cfg.robot_config(), texture, CameraSpec(),
                     noise=cfg.noise_spec(), damage=parse_damage(cfg.damage),
                     noise_seed=int(ep_stream.substream("noise").seed))
        agent = planner.OracleModel(env) if args.oracle else model
        log = planner.rollout(env, agent, task, steps=cfg.rollout_steps,
                              n_candidates=cfg.n_candidates,
                              seed=int(ep_stream.substream("plan").seed),
                              mode=args.mode)
        path = os.path.join(args.out, f"rollout_{args.task}_{args.mode}_{ep}.csv")
        fh = _open_csv(path, "step," + ",".join(f"a{i}" for i in range(12))
                       + ",pdx,pdy,pdz,proll,ppitch,pyaw"
                       + ",dx,dy,dz,droll,dpitch,dyaw,reward,x,y,yaw",
                       cfg, args.seed)
        for k in range(len(log.actions)):
            _row(fh, k, *log.actions[k], *log.predicted[k], *log.realized[k],
                 log.rewards[k], *log.poses[k])
        fh.close()
        if ep == 0:
            frame_dir = os.path.join(args.out, "frames")
            os.makedirs(frame_dir, exist_ok=True)
            comment = f"config_hash={cfg.hash()} seed={args.seed}"
            for k in range(len(log.frames)):
                for j in range(log.frames.shape[1]):
                    write_pgm(os.path.join(frame_dir, f"step{k:03d}_f{j}.pgm"),
                              log.frames[k, j], comment)
        _row(summary, ep, log.net_forward, log.heading_change)
    summary.close()
    print(f"{args.episodes} rollouts -> {args.out}")
    return 0


def cmd_damage_demo(args, cfg) -> int:
    model = load_model(args.model)
    vo_model = load_model(args.vo)
    os.makedirs(args.out, exist_ok=True)
    task = planner.TaskSpec("forward", cfg.stability_weight, cfg.heading_weight)
    monitor = resilience.DiscrepancyMonitor(model.stats.std, cfg.monitor_alpha)
    damage = args.damage or ("broken_endlink:3:0:0.25" if cfg.damage == "none"
                             else cfg.damage)

    def make_env(stream, damaged: bool):
        texture = cfg.texture(cfg.textures[0], 0).with_transform(
            stream.substream("texture"))
        return SimEnv(cfg.robot_config(), texture, CameraSpec(),
                      noise=cfg.noise_spec(),
                      damage=parse_damage(damage) if damaged else None,
                      noise_seed=int(stream.substream("noise").seed))

    root = Stream(args.seed).substream("damage_demo")
    # calibration on nominal rollouts
    samples = []
    probe = resilience.DiscrepancyMonitor(model.stats.std, cfg.monitor_alpha,
                                          tau=np.inf)
    for ep in range(cfg.calibration_episodes):
        s = root.substream(("calib", ep))
        run = resilience.run_monitored_rollout(
            make_env(s, False), model, vo_model, probe, task,
            steps=cfg.rollout_steps, n_candidates=cfg.n_candidates,
            seed=int(s.substream("plan").seed))
        samples.extend(run.d[~np.isnan(run.d)])
    tau = resilience.calibrate(monitor, np.array(samples), cfg.monitor_nsigma)

    # pre-recovery damaged rollout
    s_pre = root.substream("pre")
    pre = resilience.run_monitored_rollout(
        make_env(s_pre, True), model, vo_model, monitor, task,
        steps=cfg.rollout_steps, n_candidates=cfg.n_candidates,
        seed=int(s_pre.substream("plan").seed))
    trace = _open_csv(os.path.join(args.out, "discrepancy.csv"),
                      "step,d,ewma,alarm", cfg, args.seed)
    for k in range(len(pre.d)):
        _row(trace, k, pre.d[k], pre.ewma[k], int(pre.alarm[k]))
    trace.close()

    # recovery from VO-labeled babbling
    spec = cfg.collect_spec(damage=damage)
    recovered, report = resilience.recover(
        spec, model, vo_model, monitor, budget=cfg.recovery_budget,
        seed=int(root.substream("recover").seed), epochs=cfg.recovery_epochs,
        task=task, n_candidates=cfg.n_candidates)
    save_model(recovered, os.path.join(args.out, "model_recovered"))

    # post-recovery damaged rollout vs nominal reference
    s_post = root.substream("post")
    post = resilience.run_monitored_rollout(
        make_env(s_post, True), recovered, vo_model, monitor, task,
        steps=cfg.rollout_steps, n_candidates=cfg.n_candidates,
        seed=int(s_post.substream("plan").seed))
    s_nom = root.substream("nominal")
    nom = resilience.run_monitored_rollout(
        make_env(s_nom, False), model, vo_model, monitor, task,
        steps=cfg.rollout_steps, n_candidates=cfg.n_candidates,
        seed=int(s_nom.substream("plan").seed))

    cmp_path = os.path.join(args.out, "comparison.csv")
    fh = _open_csv(cmp_path, "phase,net_forward,heading_change,alarm_step", cfg, args.seed)
    _row(fh, "nominal", nom.log.net_forward, nom.log.heading_change, nom.alarm_step)
    _row(fh, "damaged_pre", pre.log.net_forward, pre.log.heading_change, pre.alarm_step)
    _row(fh, "damaged_post", post.log.net_forward, post.log.heading_change, post.alarm_step)
    fh.close()

    report.details.update({
        "tau": tau,
        "alarm_step_pre": pre.alarm_step,
        "config_hash": cfg.hash(),
        "seed": args.seed,
    })
    with open(os.path.join(args.out, "recovery_report.json"), "w",
              encoding="ascii") as fh:
        fh.write(report.to_json() + "\n")
    print(f"damage demo -> {args.out} (alarm at step {pre.alarm_step}, "
          f"recovery {'ok' if report.success else 'FAILED'})")
    return 0


def cmd_transfer(args, cfg) -> int:
    pretrained = load_model(args.model)
    dataset = load_dataset(args.data)
    variant = int(dataset.manifest.get("variant", "0"))
    train_set, val_set, _ = split_dataset(dataset, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)

    om, _ = transfer(pretrained, train_set, val_set, epochs=cfg.transfer_epochs,
                     seed=args.seed, lr=cfg.lr, batch=cfg.batch)
    save_model(om, os.path.join(args.out, f"model_om_v{variant}"))
    nv = SelfModel("action_only", seed=args.seed, stats=om.stats)
    train(nv, train_set, val_set, epochs=cfg.transfer_epochs, seed=args.seed,
          lr=cfg.lr, batch=cfg.batch)
    save_model(nv, os.path.join(args.out, f"model_nv_v{variant}"))

    out_path = os.path.join(args.out, f"transfer_v{variant}.csv")
    fh = _open_csv(out_path, "model,task,texture,mse_mean,mse_std", cfg, args.seed)
    models = {"OM": om, "NV": nv, "IM": pretrained}
    for task_name in cfg.tasks:
        for texture_kind in cfg.textures:
            episodes = task_episodes(cfg, texture_kind, task_name,
                                     cfg.eval_episodes, args.seed, variant=variant)
            for name, model in models.items():
                mses = [episode_mse(model, log, om.stats, imu_seed=args.seed + 31 * i)
                        for i, log in enumerate(episodes)]
                _row(fh, name, task_name, texture_kind,
                     float(np.mean(mses)), float(np.std(mses)))
    fh.close()
    print(f"transfer table -> {out_path} (encoder frozen: "
          f"{om.visual_checksum() == pretrained.visual_checksum()})")
    return 0


def cmd_report(args, cfg) -> int:
    rows = []
    with open(args.eval, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("model,"):
                continue
            model, task, texture, mean, std = line.split(",")
            rows.append((model, task, texture, float(mean), float(std)))
    by_model_task = {}
    for model, task, texture, mean, _ in rows:
        by_model_task.setdefault((model, task), []).append(mean)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "report.csv")
    fh = _open_csv(out_path, "model,task,mse_mean", cfg, args.seed)
    agg = {k: float(np.mean(v)) for k, v in sorted(by_model_task.items())}
    for (model, task), mean in agg.items():
        _row(fh, model, task, mean)
    fh.close()
    ok = True
    for task in cfg.tasks:
        v = agg.get(("vision", task))
        a = agg.get(("action_only", task))
        m = agg.get(("imu", task))
        if v is None or a is None:
            continue
        line = f"{task}: vision {v:.3e} vs action_only {a:.3e}"
        if m is not None:
            line += f" vs imu {m:.3e}"
        checks = [v < a]
        if task == "forward" and m is not None:
            checks.append(v < m < a)
        passed = all(checks)
        ok = ok and passed
        print(("PASS " if passed else "FAIL ") + line)
    print(f"report -> {out_path}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", help="experiment config file (key=value)")
    sub.add_argument("--seed", type=int, required=True,
                     help="root seed; required for reproducibility")
    sub.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evsm",
                                description="egocentric visual self-model experiments")
    subs = p.add_subparsers(dest="command", required=True)

    s = subs.add_parser("collect", help="run motor babbling, write a dataset")
    _add_common(s)
    s.add_argument("--steps", type=int, help="override total step count")
    s.set_defaults(fn=cmd_collect)

    s = subs.add_parser("train", help="train a predictor on a dataset")
    _add_common(s)
    s.add_argument("--data", required=True)
    s.add_argument("--model", default="vision",
                   choices=["vision", "action_only", "imu"])
    s.set_defaults(fn=cmd_train)

    s = subs.add_parser("train-vo", help="train the visual odometry model")
    _add_common(s)
    s.add_argument("--data", required=True)
    s.set_defaults(fn=cmd_train_vo)

    s = subs.add_parser("eval", help="per-task prediction-error table")
    _add_common(s)
    s.add_argument("--models", required=True,
                   help="comma-separated model checkpoint dirs")
    s.add_argument("--include-heldout", action="store_true")
    s.set_defaults(fn=cmd_eval)

    s = subs.add_parser("rollout", help="closed-loop locomotion episodes")
    _add_common(s)
    s.add_argument("--model", help="model checkpoint (mpc mode)")
    s.add_argument("--task", default="forward", choices=list(planner.TASKS))
    s.add_argument("--mode", default="mpc", choices=["mpc", "gait", "sinusoidal"])
    s.add_argument("--texture")
    s.add_argument("--episodes", type=int, default=1)
    s.add_argument("--oracle", action="store_true",
                   help="use the simulator oracle instead of a model")
    s.set_defaults(fn=cmd_rollout)

    s = subs.add_parser("damage-demo", help="anomaly detection and recovery")
    _add_common(s)
    s.add_argument("--model", required=True)
    s.add_argument("--vo", required=True)
    s.add_argument("--damage")
    s.set_defaults(fn=cmd_damage_demo)

    s = subs.add_parser("transfer", help="adapt to a robot variant")
    _add_common(s)
    s.add_argument("--model", required=True, help="variant-0 vision model")
    s.add_argument("--data", required=True, help="variant dataset dir")
    s.set_defaults(fn=cmd_transfer)

    s = subs.add_parser("report", help="aggregate and check eval tables")
    _add_common(s)
    s.add_argument("--eval", required=True, help="eval.csv from the eval command")
    s.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    try:
        return args.fn(args, cfg)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
