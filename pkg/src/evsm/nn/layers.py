"""Dense, convolution, leaky-ReLU and gated-recurrent layers with
hand-written backward passes for the fixed architectures in this package.

Parameters are float32; backward passes accumulate into ``Param.grad``.
Layers are dtype-agnostic so a model cloned to float64 can be checked
against finite differences.
"""
from __future__ import annotations

import numpy as np

from ..rng import Stream
from . import backend

LEAKY_SLOPE = 0.01


class Param:
    """A tensor with an optional gradient buffer of the same shape."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def add_grad(self, g):
        if self.grad is None:
            self.zero_grad()
        self.grad += g


def glorot_uniform(stream: Stream, shape, fan_in: int, fan_out: int,
                   dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    n = int(np.prod(shape))
    return stream.uniform(n, lo=-limit, hi=limit).reshape(shape).astype(dtype)


def leaky_relu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def leaky_relu_grad(x: np.ndarray, dout: np.ndarray) -> np.ndarray:
    return np.where(x > 0, dout, np.asarray(LEAKY_SLOPE, dtype=dout.dtype) * dout)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Dense:
    """y = x @ W + b, optionally followed by a leaky-ReLU."""

    def __init__(self, name: str, n_in: int, n_out: int, stream: Stream,
                 activation: bool = False):
        self.w = Param(f"{name}.w", glorot_uniform(stream.substream(f"{name}.w"),
                                                   (n_in, n_out), n_in, n_out))
        self.b = Param(f"{name}.b", np.zeros(n_out, dtype=np.float32))
        self.activation = activation
        self._x = None
        self._pre = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x: np.ndarray, exact: bool = False) -> np.ndarray:
        w = self.w.value.astype(x.dtype, copy=False)
        b = self.b.value.astype(x.dtype, copy=False)
        pre = backend.matmul(x, w, exact) + b
        self._x = x
        if not self.activation:
            return pre
        self._pre = pre
        return leaky_relu(pre)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward before forward")
        if self.activation:
            dout = leaky_relu_grad(self._pre, dout)
        x = self._x
        self.w.add_grad((x.T @ dout).astype(self.w.value.dtype))
        self.b.add_grad(dout.sum(axis=0).astype(self.b.value.dtype))
        return dout @ self.w.value.astype(dout.dtype, copy=False).T


class Conv2d:
    """kxk convolution over NHWC activations, stride/pad fixed at construction.

    Training forwards cache the im2col patch matrix for the backward pass;
    exact-mode forwards skip the cache and may run on the compiled kernel.
    """

    def __init__(self, name: str, c_in: int, c_out: int, kernel: int,
                 stride: int, pad: int, stream: Stream, activation: bool = True):
        fan_in = c_in * kernel * kernel
        fan_out = c_out * kernel * kernel
        self.w = Param(f"{name}.w", glorot_uniform(
            stream.substream(f"{name}.w"), (c_out, c_in, kernel, kernel), fan_in, fan_out))
        self.b = Param(f"{name}.b", np.zeros(c_out, dtype=np.float32))
        self.stride = stride
        self.pad = pad
        self.activation = activation
        self._patches = None
        self._x_shape = None
        self._pre = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x: np.ndarray, exact: bool = False) -> np.ndarray:
        w = self.w.value.astype(x.dtype, copy=False)
        b = self.b.value.astype(x.dtype, copy=False)
        x = np.ascontiguousarray(x)
        if exact:
            pre = backend.conv2d_forward(x, np.ascontiguousarray(w), b,
                                         self.stride, self.pad, exact=True)
            self._patches = None
        else:
            pre, self._patches = backend.conv2d_forward(
                x, w, b, self.stride, self.pad, return_cache=True)
            self._x_shape = x.shape
        if not self.activation:
            return pre
        self._pre = pre
        return leaky_relu(pre)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._patches is None:
            raise RuntimeError("backward before forward")
        if self.activation:
            dout = leaky_relu_grad(self._pre, dout)
        w = self.w.value.astype(dout.dtype, copy=False)
        dx, dw, db = backend.conv2d_backward(
            self._patches, w, np.ascontiguousarray(dout), self._x_shape,
            self.stride, self.pad)
        self.w.add_grad(dw.astype(self.w.value.dtype))
        self.b.add_grad(db.astype(self.b.value.dtype))
        return dx


class GRUCell:
    """Update/reset-gated recurrent cell.

    z = sig(x Wz + h Uz + bz); r = sig(x Wr + h Ur + br)
    c = tanh(x Wh + (r*h) Uh + bh); h' = (1-z)*h + z*c
    """

    def __init__(self, name: str, n_in: int, n_hidden: int, stream: Stream):
        def mk(suffix, shape, fi, fo):
            return Param(f"{name}.{suffix}",
                         glorot_uniform(stream.substream(f"{name}.{suffix}"), shape, fi, fo))
        self.wz = mk("wz", (n_in, n_hidden), n_in, n_hidden)
        self.uz = mk("uz", (n_hidden, n_hidden), n_hidden, n_hidden)
        self.bz = Param(f"{name}.bz", np.zeros(n_hidden, dtype=np.float32))
        self.wr = mk("wr", (n_in, n_hidden), n_in, n_hidden)
        self.ur = mk("ur", (n_hidden, n_hidden), n_hidden, n_hidden)
        self.br = Param(f"{name}.br", np.zeros(n_hidden, dtype=np.float32))
        self.wh = mk("wh", (n_in, n_hidden), n_in, n_hidden)
        self.uh = mk("uh", (n_hidden, n_hidden), n_hidden, n_hidden)
        self.bh = Param(f"{name}.bh", np.zeros(n_hidden, dtype=np.float32))
        self.n_hidden = n_hidden
        self._caches = []

    def params(self):
        return [self.wz, self.uz, self.bz, self.wr, self.ur, self.br,
                self.wh, self.uh, self.bh]

    def reset_sequence(self):
        self._caches = []

    def _mats(self, dtype):
        return [p.value.astype(dtype, copy=False) for p in
                (self.wz, self.uz, self.bz, self.wr, self.ur, self.br,
                 self.wh, self.uh, self.bh)]

    def forward(self, x: np.ndarray, h: np.ndarray, exact: bool = False) -> np.ndarray:
        wz, uz, bz, wr, ur, br, wh, uh, bh = self._mats(x.dtype)
        mm = backend.matmul
        z = sigmoid(mm(x, wz, exact) + mm(h, uz, exact) + bz)
        r = sigmoid(mm(x, wr, exact) + mm(h, ur, exact) + br)
        rh = r * h
        c = np.tanh(mm(x, wh, exact) + mm(rh, uh, exact) + bh)
        h_new = (1.0 - z) * h + z * c
        self._caches.append((x, h, z, r, rh, c))
        return h_new

    def backward(self, dh_new: np.ndarray):
        """Consumes the most recent cached step; returns (dx, dh_prev)."""
        if not self._caches:
            raise RuntimeError("backward before forward")
        x, h, z, r, rh, c = self._caches.pop()
        dt = dh_new.dtype
        dz = dh_new * (c - h)
        dc = dh_new * z
        dh = dh_new * (1.0 - z)

        dc_pre = dc * (1.0 - c * c)
        self.wh.add_grad((x.T @ dc_pre).astype(self.wh.value.dtype))
        self.bh.add_grad(dc_pre.sum(axis=0).astype(self.bh.value.dtype))
        self.uh.add_grad((rh.T @ dc_pre).astype(self.uh.value.dtype))
        drh = dc_pre @ self.uh.value.astype(dt, copy=False).T
        dx = dc_pre @ self.wh.value.astype(dt, copy=False).T
        dr = drh * h
        dh = dh + drh * r

        dr_pre = dr * r * (1.0 - r)
        self.wr.add_grad((x.T @ dr_pre).astype(self.wr.value.dtype))
        self.br.add_grad(dr_pre.sum(axis=0).astype(self.br.value.dtype))
        self.ur.add_grad((h.T @ dr_pre).astype(self.ur.value.dtype))
        dx += dr_pre @ self.wr.value.astype(dt, copy=False).T
        dh += dr_pre @ self.ur.value.astype(dt, copy=False).T

        dz_pre = dz * z * (1.0 - z)
        self.wz.add_grad((x.T @ dz_pre).astype(self.wz.value.dtype))
        self.bz.add_grad(dz_pre.sum(axis=0).astype(self.bz.value.dtype))
        self.uz.add_grad((h.T @ dz_pre).astype(self.uz.value.dtype))
        dx += dz_pre @ self.wz.value.astype(dt, copy=False).T
        dh += dz_pre @ self.uz.value.astype(dt, copy=False).T
        return dx, dh
