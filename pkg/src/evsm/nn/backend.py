"""Kernel backend selection: compiled extension when available, numpy otherwise.

``EVSM_KERNELS=python`` forces the pure-numpy lane, ``EVSM_KERNELS=compiled``
requires the extension (ImportError if missing).  Training always runs the
BLAS fast path; the backend choice governs the fixed-order ``exact`` forward
used on inference paths, where the compiled kernel replaces the slower
non-optimized einsum.
"""
from __future__ import annotations

import os

from . import kernels_py

try:
    from .. import _kernels as _ext
except ImportError:
    _ext = None

_choice = os.environ.get("EVSM_KERNELS", "auto")
if _choice == "python":
    _ext = None
elif _choice == "compiled" and _ext is None:
    raise ImportError("EVSM_KERNELS=compiled but the evsm._kernels extension is not built")
elif _choice not in ("auto", "python", "compiled"):
    raise ValueError(f"EVSM_KERNELS must be auto|python|compiled, got {_choice!r}")


def backend_name() -> str:
    return "compiled" if _ext is not None else "python"


def matmul(a, b, exact: bool = False):
    return kernels_py.matmul(a, b, exact)


def conv2d_forward(x, w, b, stride: int, pad: int, exact: bool = False,
                   return_cache: bool = False):
    if exact and not return_cache and _ext is not None:
        return _ext.conv2d_forward(x, w, b, stride, pad)
    return kernels_py.conv2d_forward(x, w, b, stride, pad, exact, return_cache)


def conv2d_backward(patches, w, dout, x_shape, stride: int, pad: int):
    return kernels_py.conv2d_backward(patches, w, dout, x_shape, stride, pad)
