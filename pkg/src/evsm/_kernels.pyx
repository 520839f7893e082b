# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution kernels: direct loops, fixed accumulation order.

Activations are NHWC, weights (O, C, k, k).  Every output element accumulates
its products in the same (ki, kj, c) order regardless of batch size, so
results are bit-identical however a workload is split into batches.
Accumulation is in double precision.
"""

import numpy as np

ctypedef fused floating:
    float
    double


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                   floating[::1] b, int stride, int pad):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    out_np = np.empty((B, Ho, Wo, O), dtype=np.asarray(x).dtype)
    cdef floating[:, :, :, ::1] out = out_np
    cdef Py_ssize_t n, o, c, ki, kj, i, j, ii, jj
    cdef double acc
    with nogil:
        for n in range(B):
            for i in range(Ho):
                for j in range(Wo):
                    for o in range(O):
                        acc = b[o]
                        for ki in range(k):
                            ii = i * stride + ki - pad
                            if ii < 0 or ii >= H:
                                continue
                            for kj in range(k):
                                jj = j * stride + kj - pad
                                if 0 <= jj < W:
                                    for c in range(C):
                                        acc += x[n, ii, jj, c] * w[o, c, ki, kj]
                        out[n, i, j, o] = <floating> acc
    return out_np
