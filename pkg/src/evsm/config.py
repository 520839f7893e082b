"""Experiment configuration: a flat key=value text file over typed defaults.

A config plus a root seed reproduces any experiment bit-identically; every
output file embeds the sha256 hash of the canonical config text along with
the seed that produced it.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .dataio import CollectSpec, parse_damage
from .render import AugSpec, CameraSpec
from .simcore import NoiseSpec, RobotConfig
from .textures import TEXTURE_KINDS, Texture


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # environment
    variant: int = 0
    textures: tuple = ("rug", "grid", "color_dots", "grass")
    heldout_texture: str = "checkerboard"
    texture_cell: float = 0.125
    texture_seed: int = 7
    damage: str = "none"
    # collection / domain randomization
    policy: str = "mixed"
    steps_per_texture: int = 5040
    episode_len: int = 56
    joint_sigma: float = 0.01
    traction_sigma: float = 0.02
    friction_randomization: bool = True
    aug_brightness: float = 20.0
    aug_sigma: float = 8.0
    # training
    epochs: int = 30
    batch: int = 32
    lr: float = 1e-4
    plateau_factor: float = 0.1
    plateau_patience: int = 20
    # planning / evaluation
    tasks: tuple = ("forward", "backward", "turn_left", "turn_right")
    n_candidates: int = 100
    eval_episodes: int = 10
    rollout_steps: int = 56
    stability_weight: float = 0.1
    heading_weight: float = 0.5
    # transfer / recovery
    transfer_epochs: int = 15
    recovery_budget: int = 2000
    recovery_epochs: int = 10
    monitor_alpha: float = 0.2
    monitor_nsigma: float = 4.0
    calibration_episodes: int = 5

    def __post_init__(self):
        for kind in tuple(self.textures) + (self.heldout_texture,):
            if kind not in TEXTURE_KINDS:
                raise ConfigError(f"unknown texture kind {kind!r}")
        if not 0 <= self.variant <= 3:
            raise ConfigError("variant must be 0..3")

    # -- derived objects ----------------------------------------------------

    def robot_config(self, variant: int | None = None) -> RobotConfig:
        return RobotConfig(variant=self.variant if variant is None else variant)

    def texture(self, kind: str, index: int = 0) -> Texture:
        return Texture(kind, cell=self.texture_cell, seed=self.texture_seed + index)

    def texture_set(self) -> tuple:
        return tuple(self.texture(kind, i) for i, kind in enumerate(self.textures))

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(self.joint_sigma, self.traction_sigma,
                         self.friction_randomization)

    def aug_spec(self) -> AugSpec:
        return AugSpec(self.aug_brightness, self.aug_sigma)

    def collect_spec(self, variant: int | None = None,
                     damage: str | None = None) -> CollectSpec:
        return CollectSpec(
            config=self.robot_config(variant),
            textures=self.texture_set(),
            camera=CameraSpec(),
            noise=self.noise_spec(),
            aug=self.aug_spec(),
            policy=self.policy,
            episode_len=self.episode_len,
            damage=parse_damage(damage if damage is not None else self.damage),
        )

    # -- text form ----------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = int(value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("ascii")).hexdigest()[:16]


def _convert(name: str, text: str, ftype, default):
    if ftype is int or isinstance(default, int) and not isinstance(default, bool):
        return int(text)
    if ftype is float or isinstance(default, float):
        return float(text)
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: cannot parse boolean {text!r}")
    if isinstance(default, tuple):
        return tuple(v for v in text.split(",") if v)
    return text


def parse_config(text: str) -> ExperimentConfig:
    defaults = ExperimentConfig()
    known = {f.name: f for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if isinstance(getattr(defaults, key), bool):
            values[key] = _convert(key, value, bool, getattr(defaults, key))
        else:
            values[key] = _convert(key, value, type(getattr(defaults, key)),
                                   getattr(defaults, key))
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="ascii") as fh:
        return parse_config(fh.read())
