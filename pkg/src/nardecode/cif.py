"""Continuous integrate-and-fire: accumulate per-frame weights left to right
and emit one integrated embedding each time the running total crosses the
firing threshold, splitting the crossing frame's weight between the closing
and opening embeddings.

The implementation is phrased through the cumulative weight sum: embedding i
collects from frame t the overlap of [ (i-1)*thr, i*thr ] with
[ S_{t-1}, S_t ], which reproduces the splitting rule and makes the backward
pass a pair of indicator-weighted sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class IntegrateCache:
    weights: np.ndarray     # (n, T) per-embedding frame weights
    states: np.ndarray      # (T, d)
    cumsum: np.ndarray      # (T,) inclusive cumulative alpha sum
    lows: np.ndarray        # (n,) interval lower bounds
    highs: np.ndarray       # (n,) interval upper bounds
    tail_emitted: bool


def cif_integrate(alphas, states, threshold: float = 1.0,
                  tail: str = "discard") -> tuple[np.ndarray, IntegrateCache]:
    """Integrate encoder states into fired embeddings.

    Returns (embeddings, cache); embeddings has one row per complete firing
    (plus one sub-threshold remainder row when tail="emit" and weight is
    left over).
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    states = np.asarray(states, dtype=np.float64)
    if alphas.ndim != 1 or states.ndim != 2 or alphas.shape[0] != states.shape[0]:
        raise ValueError("alphas must be (T,) matching states (T, d)")
    if np.any(alphas < 0):
        raise ValueError("firing weights must be non-negative")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if tail not in ("discard", "emit"):
        raise ValueError(f"unknown tail handling {tail!r}")

    cum = np.cumsum(alphas)
    total = cum[-1] if cum.size else 0.0
    n = int(np.floor(total / threshold + 1e-9))
    lows = np.arange(n, dtype=np.float64) * threshold
    highs = lows + threshold
    tail_emitted = False
    if tail == "emit" and total - n * threshold > 1e-9:
        lows = np.append(lows, n * threshold)
        highs = np.append(highs, total)
        tail_emitted = True

    prev = np.concatenate(([0.0], cum[:-1])) if cum.size else cum
    upper = np.minimum(cum[None, :], highs[:, None])
    lower = np.maximum(prev[None, :], lows[:, None])
    weights = np.clip(upper - lower, 0.0, None)
    embeddings = weights @ states
    return embeddings, IntegrateCache(weights, states, cum, lows, highs, tail_emitted)


def cif_integrate_backward(d_embeddings: np.ndarray,
                           cache: IntegrateCache) -> tuple[np.ndarray, np.ndarray]:
    """Gradients w.r.t. (alphas, states); undefined exactly at firing kinks."""
    if cache.tail_emitted:
        raise NotImplementedError("gradients are only defined for tail='discard'")
    w = cache.weights
    d_states = w.T @ d_embeddings
    dw = d_embeddings @ cache.states.T  # (n, T)
    active = w > 0.0
    cum = cache.cumsum
    # S_t raises w[i, t] while S_t < high_i and lowers w[i, t+1] while S_t > low_i
    up = dw * (active & (cum[None, :] < cache.highs[:, None]))
    down = np.zeros_like(dw)
    if cum.size > 1:
        nxt = active[:, 1:] & (cum[None, :-1] > cache.lows[:, None])
        down[:, :-1] = dw[:, 1:] * nxt
    d_cum = (up - down).sum(axis=0)
    d_alphas = np.cumsum(d_cum[::-1])[::-1]
    return d_alphas, d_states


def quantity_loss(alphas, target_length: int) -> tuple[float, np.ndarray]:
    """| sum(alphas) - L | with its (sub)gradient."""
    alphas = np.asarray(alphas, dtype=np.float64)
    diff = float(alphas.sum()) - float(target_length)
    grad = np.full_like(alphas, np.sign(diff))
    return abs(diff), grad


def train_scale(alphas, target_length: int) -> np.ndarray:
    """Rescale weights so they sum to the target length, guaranteeing the
    integration fires exactly `target_length` times (teacher forcing)."""
    alphas = np.asarray(alphas, dtype=np.float64)
    total = float(alphas.sum())
    if total <= 0.0:
        raise ValueError("cannot scale weights with zero total mass")
    return alphas * (target_length / total)


def train_scale_backward(d_scaled: np.ndarray, alphas, target_length: int) -> np.ndarray:
    """Chain rule through the rescaling: scaled_s = a_s * L / sum(a)."""
    alphas = np.asarray(alphas, dtype=np.float64)
    total = float(alphas.sum())
    ratio = target_length / total
    return ratio * d_scaled - (ratio / total) * float(d_scaled @ alphas)


def cross_entropy_loss(log_probs: np.ndarray, target) -> tuple[float, np.ndarray]:
    """Positionwise NLL of the target tokens under (L, V) log-probs."""
    lp = np.asarray(log_probs, dtype=np.float64)
    target = [int(y) for y in target]
    if lp.shape[0] != len(target):
        raise ValueError(f"{lp.shape[0]} predictions for {len(target)} targets")
    grad = np.zeros_like(lp)
    loss = 0.0
    for i, y in enumerate(target):
        loss -= lp[i, y]
        grad[i, y] -= 1.0
    return float(loss), grad
