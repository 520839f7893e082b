"""Egocentric grayscale camera over a textured ground plane.

One ray per pixel through a pinhole camera mounted on the robot body,
intersected with z = 0, sampling the texture luminance at the hit point.
The optical axis is tilted ``tilt`` radians forward of straight-down, so the
nominal footprint sits just ahead of the body; body pitch and roll tilt the
camera with the body.  Quantization is round-half-up to 8 bits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Stream
from .textures import Texture


class RenderConfigError(ValueError):
    """A pixel ray cannot hit the ground plane even at level attitude."""


@dataclass(frozen=True)
class CameraSpec:
    height: float = 0.16          # nominal mount height above the plane
    tilt: float = 0.6             # optical axis, radians forward of nadir
    hfov: float = 1.2
    size: int = 32
    frames_per_step: int = 5
    fractions: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)

    def __post_init__(self):
        if len(self.fractions) != self.frames_per_step:
            raise RenderConfigError("one step fraction per frame required")


@dataclass(frozen=True)
class AugSpec:
    """Observation augmentation: brightness shared across a step's frames,
    Gaussian pixel noise drawn per pixel per frame, both in 8-bit levels."""
    brightness: float = 20.0
    noise_sigma: float = 8.0

    @staticmethod
    def disabled() -> "AugSpec":
        return AugSpec(0.0, 0.0)


def _pixel_tangents(camera: CameraSpec) -> tuple:
    half = np.tan(camera.hfov / 2.0)
    n = camera.size
    centers = (2.0 * (np.arange(n) + 0.5) / n - 1.0) * half
    tx = np.broadcast_to(centers[None, :], (n, n))       # image right
    ty = np.broadcast_to(centers[:, None], (n, n))       # image down
    return tx, ty


def _rotation(yaw: float, pitch: float, roll: float, tilt: float) -> np.ndarray:
    """World-from-camera rotation. Camera axes: x = image right, y = image
    down, z = viewing direction. Body frame: x forward, y left, z up."""
    st, ct = np.sin(tilt), np.cos(tilt)
    # mount at level attitude: axis tilted `tilt` forward of straight down,
    # image right = body right, image top = forward
    mount = np.array([
        [0.0, -ct, st],
        [-1.0, 0.0, 0.0],
        [0.0, -st, -ct],
    ])
    cp, sp = np.cos(pitch), np.sin(pitch)
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])      # nose down +
    cr, sr = np.cos(roll), np.sin(roll)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, sr], [0.0, -sr, cr]])     # left down +
    cy, sy = np.cos(yaw), np.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx @ mount


def quantize(lum: np.ndarray) -> np.ndarray:
    """[0,1] luminance to 8-bit levels, round half up."""
    return np.clip(np.floor(lum * 255.0 + 0.5), 0.0, 255.0).astype(np.uint8)


def render_frame(pose, texture: Texture, camera: CameraSpec = CameraSpec()) -> np.ndarray:
    """Render one frame at pose = (x, y, height, yaw, pitch, roll).

    Extreme attitudes that would push rays above the horizon are attenuated
    (halved until every pixel ray hits the plane); a spec whose level-attitude
    rays miss the plane raises RenderConfigError.
    """
    x, y, h, yaw, pitch, roll = [float(v) for v in pose]
    if not all(np.isfinite(v) for v in (x, y, h, yaw, pitch, roll)):
        raise RenderConfigError("non-finite pose")
    if h <= 0:
        raise RenderConfigError("camera below the ground plane")
    tx, ty = _pixel_tangents(camera)
    dirs_cam = np.stack([tx, ty, np.ones_like(tx)], axis=-1)

    scale = 1.0
    for _ in range(60):
        rot = _rotation(yaw, scale * pitch, scale * roll, camera.tilt)
        dirs = dirs_cam @ rot.T
        if np.all(dirs[..., 2] < -1e-9):
            break
        scale *= 0.5
    else:
        rot = _rotation(yaw, 0.0, 0.0, camera.tilt)
        dirs = dirs_cam @ rot.T
        if not np.all(dirs[..., 2] < -1e-9):
            raise RenderConfigError(
                "camera spec points pixel rays at or above the horizon")

    t = -h / dirs[..., 2]
    px = x + t * dirs[..., 0]
    py = y + t * dirs[..., 1]
    return quantize(texture.lum(px, py))


def augment_step(frames: np.ndarray, aug: AugSpec, stream: Stream) -> np.ndarray:
    """Augment the frames of one step: a single brightness offset drawn
    uniformly in +-aug.brightness shared by all frames, plus per-pixel
    Gaussian noise of aug.noise_sigma levels. Output is re-quantized."""
    frames = np.asarray(frames)
    if aug.brightness == 0.0 and aug.noise_sigma == 0.0:
        return frames.copy()
    offset = stream.uniform(lo=-aug.brightness, hi=aug.brightness)
    vals = frames.astype(np.float64) + offset
    if aug.noise_sigma > 0:
        noise = stream.gaussian(frames.size, aug.noise_sigma).reshape(frames.shape)
        vals = vals + noise
    return np.clip(np.floor(vals + 0.5), 0.0, 255.0).astype(np.uint8)


def write_pgm(path, frame: np.ndarray, comment: str | None = None) -> None:
    frame = np.asarray(frame, dtype=np.uint8)
    h, w = frame.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n")
        if comment:
            fh.write(f"# {comment}\n".encode("ascii"))
        fh.write(f"{w} {h}\n255\n".encode("ascii"))
        fh.write(frame.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError("not a binary PGM file")
        line = fh.readline()
        while line.startswith(b"#"):
            line = fh.readline()
        w, h = (int(v) for v in line.split())
        maxval = int(fh.readline())
        if maxval != 255:
            raise ValueError("only 8-bit PGM supported")
        data = fh.read(w * h)
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)
