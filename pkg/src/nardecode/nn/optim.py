"""Adam with the inverse-sqrt warmup schedule, over named parameter dicts."""

from __future__ import annotations

import numpy as np


def noam_lr(step: int, warmup: int, factor: float, d_model: int) -> float:
    """factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)."""
    if step < 1:
        raise ValueError("schedule is defined for step >= 1")
    return factor * d_model ** -0.5 * min(step**-0.5, step * warmup**-1.5)


class AdamState:
    """First/second moment accumulators plus the schedule configuration."""

    def __init__(self, params: dict[str, np.ndarray], warmup: int = 1000,
                 factor: float = 1.0, d_model: int = 64,
                 beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0
        self.warmup = warmup
        self.factor = factor
        self.d_model = d_model
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    @property
    def lr(self) -> float:
        return noam_lr(max(self.step, 1), self.warmup, self.factor, self.d_model)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> None:
    """One bias-corrected Adam update, in place. Aborts on non-finite grads."""
    state.step += 1
    lr = noam_lr(state.step, state.warmup, state.factor, state.d_model)
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
