"""Counter-mode splittable PRNG used for every random draw in the package.

The generator is SplitMix64 run in counter mode: draw ``i`` of a stream with
seed ``s`` is ``mix64(s + i * GOLDEN)``.  Substreams are derived by folding an
FNV-1a hash of a label into the parent seed, so any component can be re-seeded
in isolation and replayed exactly.  Gaussians come from Box-Muller on pairs of
uniforms.  No global state anywhere; all draws are pure functions of
(seed, counter).
"""
from __future__ import annotations

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)

_U53_SCALE = float(2.0**-53)

_err = np.seterr(over="ignore")  # uint64 wraparound is the point
np.seterr(**_err)


def mix64(z):
    """SplitMix64 finalizer; accepts a uint64 scalar or array."""
    z = np.uint64(z) if np.isscalar(z) else z.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _fnv1a(data: bytes) -> np.uint64:
    h = _FNV_OFFSET
    with np.errstate(over="ignore"):
        for b in data:
            h = (h ^ np.uint64(b)) * _FNV_PRIME
    return h


def _label_bytes(label) -> bytes:
    if isinstance(label, str):
        return label.encode("utf-8")
    if isinstance(label, (int, np.integer)):
        return int(label).to_bytes(8, "little", signed=False)
    if isinstance(label, tuple):
        out = b""
        for part in label:
            out += _label_bytes(part) + b"\x1f"
        return out
    raise TypeError(f"unsupported substream label type: {type(label)!r}")


class Stream:
    """One replayable random stream: a 64-bit seed plus a draw counter."""

    __slots__ = ("seed", "_counter")

    def __init__(self, seed: int):
        self.seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    def substream(self, label) -> "Stream":
        """Derive an independent child stream; does not consume draws."""
        with np.errstate(over="ignore"):
            child = mix64(self.seed ^ _fnv1a(_label_bytes(label)))
        return Stream(int(child))

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` uint64 words."""
        ks = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return mix64(self.seed + ks * _GOLDEN)

    def uniform(self, n: int | None = None, lo: float = 0.0, hi: float = 1.0):
        """Uniform floats in [lo, hi); scalar when n is None."""
        m = 1 if n is None else int(n)
        bits = self.raw(m) >> np.uint64(11)
        u = bits.astype(np.float64) * _U53_SCALE
        out = lo + (hi - lo) * u
        return float(out[0]) if n is None else out

    def gaussian(self, n: int | None = None, sigma: float = 1.0):
        """Standard normals via Box-Muller, scaled by sigma."""
        m = 1 if n is None else int(n)
        pairs = (m + 1) // 2
        bits = self.raw(2 * pairs) >> np.uint64(11)
        u = (bits.astype(np.float64) + 1.0) * _U53_SCALE  # in (0, 1], log-safe
        u1, u2 = u[:pairs], u[pairs:]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:m] * sigma
        return float(z[0]) if n is None else z

    def integer(self, bound: int) -> int:
        """One integer in [0, bound); floor of a 53-bit uniform (documented bias < 2**-40)."""
        return int(self.uniform() * bound)

    def shuffle(self, items: np.ndarray) -> np.ndarray:
        """Fisher-Yates shuffle; returns a new array."""
        out = np.array(items, copy=True)
        for i in range(len(out) - 1, 0, -1):
            j = self.integer(i + 1)
            out[i], out[j] = out[j], out[i]
        return out


def hash_lattice(seed: np.uint64, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
    """Deterministic per-lattice-point uniforms in [0,1) for procedural textures."""
    with np.errstate(over="ignore"):
        h = mix64(
            np.uint64(seed)
            + ix.astype(np.uint64) * _GOLDEN
            + iy.astype(np.uint64) * _MIX1
        )
    return (h >> np.uint64(11)).astype(np.float64) * _U53_SCALE
