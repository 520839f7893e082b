"""Pure-numpy convolution kernels (NHWC layout, cached im2col).

Two accumulation modes everywhere in this package:

* ``fast``  — BLAS matmul; quickest for training, but the accumulation order
  inside BLAS may depend on operand shapes, so results are only guaranteed
  reproducible for a fixed batch layout.
* ``exact`` — fixed-order summation (non-optimized einsum).  Bit-identical
  results regardless of how a workload is split into batches; used for
  inference paths where batch/serial equivalence is a contract.

Weights keep the (O, C, k, k) layout; activations are (B, H, W, C).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def matmul(a: np.ndarray, b: np.ndarray, exact: bool = False) -> np.ndarray:
    if exact:
        return np.einsum("ik,kj->ij", a, b, optimize=False)
    return a @ b


def out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """x (B,H,W,C) -> patch matrix (B*Ho*Wo, k*k*C), rows ordered (b, i, j),
    columns ordered (ki, kj, c)."""
    B, H, W, C = x.shape
    Ho, Wo = out_size(H, k, stride, pad), out_size(W, k, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    sB, sH, sW, sC = x.strides
    view = as_strided(
        x, shape=(B, Ho, Wo, k, k, C),
        strides=(sB, stride * sH, stride * sW, sH, sW, sC), writeable=False)
    return np.ascontiguousarray(view).reshape(B * Ho * Wo, k * k * C)


def weight_matrix(w: np.ndarray) -> np.ndarray:
    """(O,C,k,k) -> (k*k*C, O) matching im2col column order."""
    O, C, k, _ = w.shape
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0).reshape(k * k * C, O))


def conv2d_forward(x, w, b, stride: int, pad: int, exact: bool = False,
                   return_cache: bool = False):
    """x (B,H,W,C), w (O,C,k,k), b (O,) -> (B,Ho,Wo,O)."""
    B, H, W, C = x.shape
    O, _, k, _ = w.shape
    Ho, Wo = out_size(H, k, stride, pad), out_size(W, k, stride, pad)
    patches = im2col(x, k, stride, pad)
    out = matmul(patches, weight_matrix(w).astype(x.dtype, copy=False), exact)
    out += b.astype(x.dtype, copy=False)
    out = out.reshape(B, Ho, Wo, O)
    if return_cache:
        return out, patches
    return out


def conv2d_backward(patches, w, dout, x_shape, stride: int, pad: int):
    """Gradients from the cached im2col patches; returns (dx, dw, db)."""
    B, H, W, C = x_shape
    O, _, k, _ = w.shape
    _, Ho, Wo, _ = dout.shape
    dr = dout.reshape(-1, O)
    db = dr.sum(axis=0)
    dwm = patches.T @ dr                                   # (k*k*C, O)
    dw = dwm.reshape(k, k, C, O).transpose(3, 2, 0, 1)
    dpatch = dr @ weight_matrix(w).astype(dr.dtype, copy=False).T
    dpatch = dpatch.reshape(B, Ho, Wo, k, k, C)
    Hp, Wp = H + 2 * pad, W + 2 * pad
    dxp = np.zeros((B, Hp, Wp, C), dtype=dr.dtype)
    for ki in range(k):
        for kj in range(k):
            dxp[:, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride, :] += \
                dpatch[:, :, :, ki, kj, :]
    dx = dxp[:, pad:pad + H, pad:pad + W, :] if pad else dxp
    return np.ascontiguousarray(dx), np.ascontiguousarray(dw), db
