"""Central-difference gradient verification for any named-parameter loss."""

from __future__ import annotations

import math

import numpy as np


def grad_check(loss_fn, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               rng: np.random.Generator, samples: int = 100, h: float = 1e-5) -> float:
    """Compare analytic gradients against central differences.

    `loss_fn()` must recompute the loss at the current parameters and leave
    the matching gradients in `grads` (which this function zeroes first).
    Checks `samples` randomly chosen scalar parameters and returns the worst
    relative error max|analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
    """
    for g in grads.values():
        g[...] = 0.0
    base = loss_fn()
    if not math.isfinite(base):
        raise FloatingPointError("loss is not finite at the evaluation point")
    analytic = {k: g.copy() for k, g in grads.items()}

    names = sorted(params)
    sizes = np.array([params[k].size for k in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(samples, total), replace=False)
    offsets = np.cumsum(sizes) - sizes

    worst = 0.0
    for flat in sorted(int(i) for i in picks):
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[which]
        idx = np.unravel_index(flat - offsets[which], params[name].shape)
        p = params[name]
        keep = p[idx]
        p[idx] = keep + h
        hi = loss_fn()
        p[idx] = keep - h
        lo = loss_fn()
        p[idx] = keep
        numeric = (hi - lo) / (2 * h)
        a = analytic[name][idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
        worst = max(worst, err)
    return worst
