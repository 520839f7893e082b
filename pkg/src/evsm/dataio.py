"""Motor-babbling collection, the on-disk dataset format, and splits.

A dataset is a directory: ``manifest.txt`` (key=value) plus one binary blob
per episode.  Blob layout (all little-endian): magic ``EVSM``, version u32,
record count u32, then per record

    action      12 x f32
    frames      5 x 1024 bytes (32x32 grayscale, oldest first)
    delta       6 x f32
    aux         q_prev 12 x f64, pose_before (x, y, yaw) 3 x f64,
                friction 4 x f64, gains 4 x f64,
                texture_id u32, variant u32, episode u32, step u32,
                noise_seed u64

Labels are stored raw (denormalized); normalization statistics are computed
from the training split only and carried in the manifest.  Every stored label
is exactly reproducible from the aux block: noise off via one oracle call,
noise on by replaying the recorded noise seed.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import simcore
from .render import AugSpec, CameraSpec, augment_step, render_frame
from .rng import Stream
from .simcore import DamageMode, NoiseSpec, RobotConfig, RobotState
from .textures import Texture, friction_at

MAGIC = b"EVSM"
FORMAT_VERSION = 1
EPISODE_LEN = 56

RECORD_DTYPE = np.dtype([
    ("action", "<f4", (12,)),
    ("frames", "u1", (5, 32, 32)),
    ("delta", "<f4", (6,)),
    ("q_prev", "<f8", (12,)),
    ("pose", "<f8", (3,)),
    ("friction", "<f8", (4,)),
    ("gains", "<f8", (4,)),
    ("texture_id", "<u4"),
    ("reserved", "<u4"),
    ("episode", "<u4"),
    ("step", "<u4"),
    ("noise_seed", "<u8"),
])
RECORD_BYTES = RECORD_DTYPE.itemsize


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class CollectSpec:
    """Everything that defines a collection run except step count and seed."""
    config: RobotConfig = RobotConfig()
    textures: tuple = ()
    camera: CameraSpec = CameraSpec()
    noise: NoiseSpec = NoiseSpec()
    aug: AugSpec = AugSpec()
    policy: str = "mixed"
    episode_len: int = EPISODE_LEN
    damage: DamageMode | None = None


class SimEnv:
    """Stateful wrapper: dynamics + texture-derived friction + rendering."""

    def __init__(self, config: RobotConfig, texture: Texture,
                 camera: CameraSpec = CameraSpec(),
                 noise: NoiseSpec = NoiseSpec.disabled(),
                 damage: DamageMode | None = None,
                 friction_scale: float = 1.0,
                 noise_seed: int = 0):
        self.config = config
        self.texture = texture
        self.camera = camera
        self.noise = noise
        self.friction_scale = friction_scale
        self.state = simcore.initial_state(config)
        if damage is not None:
            self.state = simcore.apply_damage(self.state, damage)
        self._noise_root = Stream(noise_seed).substream("env_noise")
        self._step_count = 0

    def foot_friction(self) -> np.ndarray:
        """Per-leg friction from the texture at the current foot positions."""
        c, s = np.cos(self.state.yaw), np.sin(self.state.yaw)
        offs = np.asarray(self.config.foot_offsets)
        fx = self.state.x + offs[:, 0] * c - offs[:, 1] * s
        fy = self.state.y + offs[:, 0] * s + offs[:, 1] * c
        mu = friction_at(self.texture, fx, fy) * self.friction_scale
        return np.clip(mu, simcore.MU_MIN, simcore.MU_MAX)

    def pose_tuple(self) -> tuple:
        return simcore.body_attitude(self.config, self.state)

    def render_step_frames(self, prev: RobotState) -> np.ndarray:
        """Frames at the camera fractions of the step prev -> current state."""
        frames = np.empty((self.camera.frames_per_step, self.camera.size,
                           self.camera.size), dtype=np.uint8)
        dyaw = self.state.yaw - prev.yaw
        for k, f in enumerate(self.camera.fractions):
            q = prev.q + f * (self.state.q - prev.q)
            x = prev.x + f * (self.state.x - prev.x)
            y = prev.y + f * (self.state.y - prev.y)
            yaw = prev.yaw + f * dyaw
            h = self.camera.height + (
                simcore.height_of(self.config, q) - self.config.nominal_height)
            pose = (x, y, h, yaw,
                    simcore.pitch_of(self.config, q),
                    simcore.roll_of(self.config, q))
            frames[k] = render_frame(pose, self.texture, self.camera)
        return frames

    def step(self, action: np.ndarray, noise_stream: Stream | None = None):
        """Apply one action; returns (delta, frames, friction_used)."""
        mu = self.foot_friction()
        prev = self.state
        stream = None
        if self.noise.enabled:
            stream = noise_stream or self._noise_root.substream(self._step_count)
        self._step_count += 1
        self.state, delta = simcore.step_dynamics(
            self.config, prev, action, mu, self.noise, stream)
        frames = self.render_step_frames(prev)
        return delta, frames, mu


@dataclass
class Dataset:
    """In-memory structure-of-arrays view of a collection run."""
    actions: np.ndarray        # (N, 12) f32
    frames: np.ndarray         # (N, 5, 32, 32) u8
    deltas: np.ndarray         # (N, 6) f32
    q_prev: np.ndarray         # (N, 12) f64
    pose: np.ndarray           # (N, 3) f64
    friction: np.ndarray       # (N, 4) f64
    gains: np.ndarray          # (N, 4) f64
    texture_id: np.ndarray     # (N,) u32
    episode: np.ndarray        # (N,) u32
    step: np.ndarray           # (N,) u32
    noise_seed: np.ndarray     # (N,) u64
    manifest: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def episode_ids(self) -> np.ndarray:
        return np.unique(self.episode)

    def subset(self, episode_ids) -> "Dataset":
        mask = np.isin(self.episode, np.asarray(episode_ids))
        return Dataset(
            self.actions[mask], self.frames[mask], self.deltas[mask],
            self.q_prev[mask], self.pose[mask], self.friction[mask],
            self.gains[mask], self.texture_id[mask], self.episode[mask],
            self.step[mask], self.noise_seed[mask], dict(self.manifest))


@dataclass(frozen=True)
class NormStats:
    """Per-dimension mean/std of the training-split labels."""
    mean: np.ndarray
    std: np.ndarray
    zero_std_dims: tuple = ()

    def normalize(self, deltas: np.ndarray) -> np.ndarray:
        return (deltas - self.mean.astype(deltas.dtype)) / self.std.astype(deltas.dtype)

    def denormalize(self, normalized: np.ndarray) -> np.ndarray:
        return normalized * self.std.astype(normalized.dtype) + self.mean.astype(normalized.dtype)

    def to_manifest(self) -> dict:
        return {
            "norm_mean": ",".join(repr(float(v)) for v in self.mean),
            "norm_std": ",".join(repr(float(v)) for v in self.std),
            "norm_zero_dims": ",".join(str(d) for d in self.zero_std_dims),
        }

    @staticmethod
    def from_manifest(manifest: dict) -> "NormStats":
        if "norm_mean" not in manifest:
            raise DatasetError("manifest carries no normalization statistics")
        mean = np.array([float(v) for v in manifest["norm_mean"].split(",")])
        std = np.array([float(v) for v in manifest["norm_std"].split(",")])
        zd = tuple(int(v) for v in manifest["norm_zero_dims"].split(",") if v != "")
        return NormStats(mean, std, zd)


def compute_stats(deltas: np.ndarray) -> NormStats:
    """Mean/std per dimension; a zero-std dimension gets scale 1 and is flagged."""
    d = np.asarray(deltas, dtype=np.float64)
    if len(d) == 0:
        raise DatasetError("cannot compute statistics of an empty split")
    mean = d.mean(axis=0)
    std = d.std(axis=0)
    zero = tuple(int(i) for i in np.nonzero(std < 1e-12)[0])
    std = std.copy()
    for i in zero:
        std[i] = 1.0  # constant dimension: scale 1, normalized values all 0
    return NormStats(mean, std, zero)


def normalize_labels(dataset: Dataset, stats: NormStats | None = None):
    """Returns (normalized labels, stats); stats from this data if not given."""
    if stats is None:
        stats = compute_stats(dataset.deltas)
    return stats.normalize(dataset.deltas.astype(np.float64)), stats


def split_dataset(dataset: Dataset, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """By-episode split (no episode straddles splits); deterministic in seed."""
    eps = dataset.episode_ids
    if len(eps) < len(ratios):
        raise DatasetError(f"{len(eps)} episodes cannot fill {len(ratios)} splits")
    order = Stream(seed).substream("split").shuffle(eps)
    n = len(order)
    n_val = max(1, int(round(ratios[1] * n)))
    n_test = max(1, int(round(ratios[2] * n)))
    n_train = n - n_val - n_test
    train = order[:n_train]
    val = order[n_train:n_train + n_val]
    test = order[n_train + n_val:]
    return dataset.subset(train), dataset.subset(val), dataset.subset(test)


POLICIES = ("babbling", "gait_generator", "gait_random", "mixed")


def make_policy(policy: str, episode: int):
    """Per-episode action policy: step index + stream -> action in [-1,1]^12.

    babbling        raw uniform joint targets.
    gait_generator  uniform targets clipped into the gait envelope.
    gait_random     fresh random gait parameters every step, phase continuous.
    mixed           alternate episodes of gait_generator and gait_random, so
                    the data covers both chaotic and deployment-like motion.
    """
    if policy == "mixed":
        policy = "gait_generator" if episode % 2 == 0 else "gait_random"
    if policy == "babbling":
        return lambda k, stream: stream.uniform(12, lo=-1.0, hi=1.0)
    if policy == "gait_generator":
        from .planner import clip_to_envelope

        def clipped(k, stream):
            return clip_to_envelope(stream.uniform(12, lo=-1.0, hi=1.0))
        return clipped
    if policy == "gait_random":
        from .planner import GaitGenerator
        gen = GaitGenerator()
        phase_box = [0.0]

        def gait(k, stream):
            params = gen.sample_params(stream)
            phase_box[0] += params.dphase
            return gen.action_at(params, phase_box[0])
        return gait
    raise DatasetError(f"unknown policy {policy!r}")


def collect(spec: CollectSpec, n_steps: int, seed: int) -> Dataset:
    """Run motor babbling for at least n_steps (rounded up to whole episodes).

    Episodes cycle round-robin over spec.textures; each episode gets a fresh
    texture transform, friction scale and initial stance at the origin.
    """
    if n_steps < 1:
        raise DatasetError("n_steps must be >= 1")
    if not spec.textures:
        raise DatasetError("at least one texture required")
    ep_len = spec.episode_len
    n_eps = -(-n_steps // ep_len)
    root = Stream(seed)
    n = n_eps * ep_len

    out = Dataset(
        actions=np.empty((n, 12), dtype=np.float32),
        frames=np.empty((n, 5, spec.camera.size, spec.camera.size), dtype=np.uint8),
        deltas=np.empty((n, 6), dtype=np.float32),
        q_prev=np.empty((n, 12)), pose=np.empty((n, 3)),
        friction=np.empty((n, 4)), gains=np.empty((n, 4)),
        texture_id=np.empty(n, dtype=np.uint32),
        episode=np.empty(n, dtype=np.uint32),
        step=np.empty(n, dtype=np.uint32),
        noise_seed=np.empty(n, dtype=np.uint64),
    )

    idx = 0
    for ep in range(n_eps):
        tex_id = ep % len(spec.textures)
        texture = spec.textures[tex_id].with_transform(root.substream(("texture", ep)))
        fric_scale = 1.0
        if spec.noise.friction_randomization:
            fric_scale = root.substream(("friction_scale", ep)).uniform(lo=0.6, hi=1.0)
        env = SimEnv(spec.config, texture, spec.camera, spec.noise,
                     damage=spec.damage, friction_scale=fric_scale)
        policy_fn = make_policy(spec.policy, ep)
        for k in range(ep_len):
            # quantize to the stored precision before executing, so a stored
            # record replays its label bit-for-bit
            action = policy_fn(k, root.substream(("policy", ep, k)))
            action = np.clip(action, -1.0, 1.0).astype(np.float32).astype(np.float64)
            noise_stream = root.substream(("noise", ep, k))
            out.q_prev[idx] = env.state.q
            out.pose[idx] = (env.state.x, env.state.y, env.state.yaw)
            out.gains[idx] = env.state.gains
            delta, frames, mu = env.step(action, noise_stream)
            if spec.aug.brightness > 0 or spec.aug.noise_sigma > 0:
                aug_stream = root.substream(("aug", ep, k))
                # per-step noise level drawn from [0, sigma_max]
                step_aug = AugSpec(spec.aug.brightness,
                                   aug_stream.uniform(lo=0.0, hi=spec.aug.noise_sigma))
                frames = augment_step(frames, step_aug, aug_stream)
            out.actions[idx] = action.astype(np.float32)
            out.frames[idx] = frames
            out.deltas[idx] = delta.astype(np.float32)
            out.friction[idx] = mu
            out.texture_id[idx] = tex_id
            out.episode[idx] = ep
            out.step[idx] = k
            out.noise_seed[idx] = np.uint64(noise_stream.seed)
            idx += 1

    out.manifest = {
        "format_version": str(FORMAT_VERSION),
        "variant": str(spec.config.variant),
        "textures": ";".join(
            f"{t.kind}:{repr(float(t.cell))}:{int(t.seed)}" for t in spec.textures),
        "n_episodes": str(n_eps),
        "n_records": str(n),
        "episode_len": str(ep_len),
        "policy": spec.policy,
        "joint_sigma": repr(float(spec.noise.joint_sigma)),
        "traction_sigma": repr(float(spec.noise.traction_sigma)),
        "friction_randomization": str(int(spec.noise.friction_randomization)),
        "aug_brightness": repr(float(spec.aug.brightness)),
        "aug_sigma": repr(float(spec.aug.noise_sigma)),
        "damage": _damage_str(spec.damage),
        "seed": str(seed),
    }
    return out


def _damage_str(mode: DamageMode | None) -> str:
    if mode is None:
        return "none"
    return f"{mode.kind}:{mode.leg}:{mode.joint}:{repr(float(mode.gain))}"


def parse_damage(text: str) -> DamageMode | None:
    if text in ("none", ""):
        return None
    kind, leg, joint, gain = text.split(":")
    return DamageMode(kind, int(leg), int(joint), float(gain))


def replay_label(dataset: Dataset, i: int, config: RobotConfig | None = None,
                 noise: NoiseSpec | None = None) -> np.ndarray:
    """Recompute record i's label from its aux block via the dynamics oracle."""
    if config is None:
        config = RobotConfig(variant=int(dataset.manifest.get("variant", "0")))
    damage = parse_damage(dataset.manifest.get("damage", "none"))
    base = simcore.initial_state(config)
    state = RobotState(q=dataset.q_prev[i].copy(),
                       x=dataset.pose[i, 0], y=dataset.pose[i, 1],
                       yaw=dataset.pose[i, 2])
    state.gains = dataset.gains[i].copy()
    if damage is not None and damage.kind in ("stuck_joint", "sign_flip"):
        damaged = simcore.apply_damage(base, damage)
        state.stuck_mask = damaged.stuck_mask
        state.stuck_value = damaged.stuck_value
        state.flip_mask = damaged.flip_mask
    if noise is None:
        noise = NoiseSpec(
            joint_sigma=float(dataset.manifest.get("joint_sigma", "0.0")),
            traction_sigma=float(dataset.manifest.get("traction_sigma", "0.0")),
            friction_randomization=False,
        )
    stream = Stream(int(dataset.noise_seed[i])) if noise.enabled else None
    _, delta = simcore.step_dynamics(
        config, state, dataset.actions[i].astype(np.float64),
        dataset.friction[i], noise, stream)
    return delta


# ---------------------------------------------------------------------------
# on-disk format


def save_dataset(dataset: Dataset, path) -> None:
    os.makedirs(path, exist_ok=True)
    _write_manifest(os.path.join(path, "manifest.txt"), dataset.manifest)
    for ep in dataset.episode_ids:
        mask = dataset.episode == ep
        _write_blob(os.path.join(path, f"ep_{int(ep)}.bin"), dataset, np.nonzero(mask)[0])


def _write_manifest(path, manifest: dict) -> None:
    lines = [f"{k}={v}" for k, v in sorted(manifest.items())]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    manifest = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            manifest[key] = value
    return manifest


def _write_blob(path, d: Dataset, idx: np.ndarray) -> None:
    recs = np.zeros(len(idx), dtype=RECORD_DTYPE)
    recs["action"] = d.actions[idx]
    recs["frames"] = d.frames[idx]
    recs["delta"] = d.deltas[idx]
    recs["q_prev"] = d.q_prev[idx]
    recs["pose"] = d.pose[idx]
    recs["friction"] = d.friction[idx]
    recs["gains"] = d.gains[idx]
    recs["texture_id"] = d.texture_id[idx]
    recs["episode"] = d.episode[idx]
    recs["step"] = d.step[idx]
    recs["noise_seed"] = d.noise_seed[idx]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(FORMAT_VERSION).tobytes())
        fh.write(np.uint32(len(idx)).tobytes())
        fh.write(recs.tobytes())


def load_dataset(path) -> Dataset:
    manifest = read_manifest(os.path.join(path, "manifest.txt"))
    files = sorted(
        (f for f in os.listdir(path) if f.startswith("ep_") and f.endswith(".bin")),
        key=lambda f: int(f[3:-4]))
    chunks = []
    for fname in files:
        with open(os.path.join(path, fname), "rb") as fh:
            raw = fh.read()
        if raw[:4] != MAGIC:
            raise DatasetError(f"{fname}: bad magic")
        version = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
        if version != FORMAT_VERSION:
            raise DatasetError(f"{fname}: unsupported format version {version}")
        count = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
        body = raw[12:]
        if len(body) != count * RECORD_BYTES:
            raise DatasetError(f"{fname}: truncated blob")
        chunks.append(np.frombuffer(body, dtype=RECORD_DTYPE))
    recs = np.concatenate(chunks) if chunks else np.zeros(0, dtype=RECORD_DTYPE)
    if "n_records" in manifest and len(recs) != int(manifest["n_records"]):
        raise DatasetError("manifest record count does not match blobs")
    return Dataset(
        actions=np.ascontiguousarray(recs["action"]),
        frames=np.ascontiguousarray(recs["frames"]),
        deltas=np.ascontiguousarray(recs["delta"]),
        q_prev=np.ascontiguousarray(recs["q_prev"]),
        pose=np.ascontiguousarray(recs["pose"]),
        friction=np.ascontiguousarray(recs["friction"]),
        gains=np.ascontiguousarray(recs["gains"]),
        texture_id=np.ascontiguousarray(recs["texture_id"]),
        episode=np.ascontiguousarray(recs["episode"]),
        step=np.ascontiguousarray(recs["step"]),
        noise_seed=np.ascontiguousarray(recs["noise_seed"]),
        manifest=manifest,
    )
