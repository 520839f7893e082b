"""Procedural ground textures and the luminance-to-friction mapping.

Every texture is a deterministic, periodic luminance field lum(x, y) in
[0, 1] over the plane, with a per-episode rotation / scale / translation
applied to world coordinates first.  Friction is tied to luminance
(bright = slippery), which is what makes ground appearance informative
about dynamics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Stream, hash_lattice
from .simcore import MU_MIN, MU_MAX

TEXTURE_KINDS = ("rug", "grid", "color_dots", "grass", "checkerboard", "slippery_patches")
TRAINING_TEXTURES = ("rug", "grid", "color_dots", "grass")

_LATTICE_PERIOD = 64  # value-noise lattice repeats every 64 cells


@dataclass(frozen=True)
class Texture:
    kind: str
    cell: float = 0.1
    seed: int = 0
    # per-episode transform of world coordinates
    rotation: float = 0.0
    scale: float = 1.0
    offset: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in TEXTURE_KINDS:
            raise ValueError(f"unknown texture kind {self.kind!r}")

    def with_transform(self, stream: Stream) -> "Texture":
        """Fresh per-episode rotation, scale and translation."""
        rot = stream.uniform(lo=0.0, hi=2.0 * np.pi)
        scale = stream.uniform(lo=0.8, hi=1.25)
        span = _LATTICE_PERIOD * self.cell
        ox = stream.uniform(lo=0.0, hi=span)
        oy = stream.uniform(lo=0.0, hi=span)
        return Texture(self.kind, self.cell, self.seed, rot, scale, (ox, oy))

    def _to_texture_coords(self, x, y):
        x = np.asarray(x, dtype=np.float64) - self.offset[0]
        y = np.asarray(y, dtype=np.float64) - self.offset[1]
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        u = (c * x + s * y) / self.scale
        v = (-s * x + c * y) / self.scale
        return u / self.cell, v / self.cell

    def lum(self, x, y) -> np.ndarray:
        """Luminance in [0,1] at world points; vectorized."""
        u, v = self._to_texture_coords(x, y)
        fn = _KIND_FNS[self.kind]
        return fn(u, v, np.uint64(self.seed))


def _smooth(t):
    return t * t * (3.0 - 2.0 * t)


def _value_noise(u, v, seed, octave: int) -> np.ndarray:
    """One octave of lattice value noise, periodic with _LATTICE_PERIOD."""
    iu = np.floor(u).astype(np.int64)
    iv = np.floor(v).astype(np.int64)
    fu, fv = u - iu, v - iv
    iu %= _LATTICE_PERIOD
    iv %= _LATTICE_PERIOD
    iu1 = (iu + 1) % _LATTICE_PERIOD
    iv1 = (iv + 1) % _LATTICE_PERIOD
    oseed = np.uint64((int(seed) + octave * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF)
    a = hash_lattice(oseed, iu, iv)
    b = hash_lattice(oseed, iu1, iv)
    c = hash_lattice(oseed, iu, iv1)
    d = hash_lattice(oseed, iu1, iv1)
    su, sv = _smooth(fu), _smooth(fv)
    top = a + (b - a) * su
    bot = c + (d - c) * su
    return top + (bot - top) * sv


def _rug(u, v, seed):
    # two soft octaves, mid-grey range: dense fibrous look, grippy overall
    n = 0.7 * _value_noise(u, v, seed, 0) + 0.3 * _value_noise(2.0 * u, 2.0 * v, seed, 1)
    return np.clip(0.15 + 0.55 * n, 0.0, 1.0)


def _grass(u, v, seed):
    n = (0.5 * _value_noise(1.5 * u, 1.5 * v, seed, 0)
         + 0.35 * _value_noise(3.0 * u, 3.0 * v, seed, 1)
         + 0.15 * _value_noise(6.0 * u, 6.0 * v, seed, 2))
    return np.clip(0.10 + 0.75 * n, 0.0, 1.0)


def _grid(u, v, seed):
    du = np.minimum(u % 1.0, 1.0 - (u % 1.0))
    dv = np.minimum(v % 1.0, 1.0 - (v % 1.0))
    line = np.minimum(du, dv) < 0.08
    return np.where(line, 0.2, 0.8)


def _color_dots(u, v, seed):
    iu = np.floor(u).astype(np.int64) % _LATTICE_PERIOD
    iv = np.floor(v).astype(np.int64) % _LATTICE_PERIOD
    fu, fv = u % 1.0, v % 1.0
    h1 = hash_lattice(seed, iu, iv)
    h2 = hash_lattice(seed + np.uint64(1), iu, iv)
    h3 = hash_lattice(seed + np.uint64(2), iu, iv)
    cx = 0.3 + 0.4 * h1
    cy = 0.3 + 0.4 * h2
    radius = 0.22 + 0.16 * h3
    gray = 0.1 + 0.8 * hash_lattice(seed + np.uint64(3), iu, iv)
    inside = (fu - cx) ** 2 + (fv - cy) ** 2 < radius**2
    return np.where(inside, gray, 0.55)


def _checkerboard(u, v, seed):
    parity = (np.floor(u).astype(np.int64) + np.floor(v).astype(np.int64)) % 2
    return np.where(parity == 0, 0.9, 0.15)


def _slippery_patches(u, v, seed):
    # dark grippy carpet with bright paper-like patches
    base = np.clip(0.12 + 0.3 * _value_noise(u, v, seed, 0), 0.0, 1.0)
    pu = np.floor(u / 3.0).astype(np.int64) % _LATTICE_PERIOD
    pv = np.floor(v / 3.0).astype(np.int64) % _LATTICE_PERIOD
    is_patch = hash_lattice(seed + np.uint64(7), pu, pv) < 0.3
    fu, fv = (u / 3.0) % 1.0, (v / 3.0) % 1.0
    inside = (fu - 0.5) ** 2 + (fv - 0.5) ** 2 < 0.33**2
    return np.where(is_patch & inside, 0.95, base)


_KIND_FNS = {
    "rug": _rug,
    "grid": _grid,
    "color_dots": _color_dots,
    "grass": _grass,
    "checkerboard": _checkerboard,
    "slippery_patches": _slippery_patches,
}

# tiling period of each kind, in cells (checkerboard repeats every 2 cells,
# grass's 1.5x octave every 128, the patch grid every 3*64)
PERIOD_CELLS = {
    "rug": 64,
    "grid": 1,
    "color_dots": 64,
    "grass": 128,
    "checkerboard": 2,
    "slippery_patches": 192,
}


def friction_at(texture: Texture, x, y) -> np.ndarray:
    """mu = 0.2 + 0.8 * (1 - lum): dark ground grips, bright ground slips."""
    return MU_MIN + (MU_MAX - MU_MIN) * (1.0 - texture.lum(x, y))
