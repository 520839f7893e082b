"""Finite-difference oracle for the hand-written backward passes.

Central differences on a piecewise-linear network are only valid when the
two evaluation points sit on the same linear piece; a probe whose +-h
evaluations land on different sides of any leaky-ReLU kink measures the wrong
slope regardless of how correct the analytic gradient is.  The checker
therefore compares the activation sign pattern at both points and resamples
probes that cross a kink (forward evaluations only; the backward pass under
test is never consulted).
"""
from __future__ import annotations

import numpy as np


def activation_signature(model) -> tuple:
    """Sign pattern of every cached leaky-ReLU pre-activation in the model."""
    sig = []
    layers = []
    if model.visual is not None:
        layers.extend(model.visual.convs)
    layers.extend(model.action_enc + model.imu_enc + model.fusion)
    for layer in layers:
        if getattr(layer, "activation", False) and layer._pre is not None:
            sig.append(np.signbit(layer._pre).tobytes())
    return tuple(sig)


def finite_difference_check(model, loss_fn, *, n_probes: int = 100,
                            h: float = 1e-3, seed: int = 0) -> dict:
    """Compare analytic parameter gradients against central differences.

    ``loss_fn()`` must run a forward pass of ``model`` and return a scalar
    float64 loss.  The model must already hold float64 parameters and the
    analytic gradients for this loss in ``Param.grad``.

    Returns a dict with max_rel_err, n_valid, n_crossed.
    """
    params = [p for p in model.params()]
    pick = np.random.default_rng(seed)
    max_rel = 0.0
    valid = 0
    crossed = 0
    attempts = 0
    while valid < n_probes and attempts < 20 * n_probes:
        attempts += 1
        p = params[pick.integers(len(params))]
        idx = tuple(pick.integers(s) for s in p.value.shape)
        keep = p.value[idx]
        p.value[idx] = keep + h
        lp = loss_fn()
        sig_p = activation_signature(model)
        p.value[idx] = keep - h
        lm = loss_fn()
        sig_m = activation_signature(model)
        p.value[idx] = keep
        if sig_p != sig_m:
            crossed += 1
            continue
        num = (lp - lm) / (2.0 * h)
        ana = float(p.grad[idx])
        rel = abs(num - ana) / max(abs(num), abs(ana), 1e-10)
        max_rel = max(max_rel, rel)
        valid += 1
    return {"max_rel_err": max_rel, "n_valid": valid, "n_crossed": crossed}
