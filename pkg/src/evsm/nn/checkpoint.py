"""Checkpoints: a text manifest (name, shape, byte offset) plus one binary
file of 32-bit little-endian floats.  Round-trips are bit-exact."""
from __future__ import annotations

import os

import numpy as np


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    """tensors: ordered name -> float32 array; meta: extra string pairs."""
    os.makedirs(path, exist_ok=True)
    lines = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"tensor {name} {shape} {offset}")
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    for key, value in sorted((meta or {}).items()):
        lines.append(f"meta {key}={value}")
    with open(os.path.join(path, "manifest.txt"), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(path, "params.bin"), "wb") as fh:
        fh.write(b"".join(blobs))


def load_checkpoint(path) -> tuple:
    """Returns (tensors dict, meta dict)."""
    tensors = {}
    meta = {}
    entries = []
    with open(os.path.join(path, "manifest.txt"), "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("tensor "):
                _, name, shape, offset = line.split(" ")
                dims = tuple(int(s) for s in shape.split(",") if s)
                entries.append((name, dims, int(offset)))
            elif line.startswith("meta "):
                key, _, value = line[5:].partition("=")
                meta[key] = value
    with open(os.path.join(path, "params.bin"), "rb") as fh:
        raw = fh.read()
    for name, dims, offset in entries:
        count = int(np.prod(dims)) if dims else 1
        tensors[name] = np.frombuffer(raw, "<f4", count, offset).reshape(dims).copy()
    return tensors, meta
