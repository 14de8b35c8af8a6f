"""Auxiliary CTC losses on intermediate encoder layers, and posterior
feedback (self-conditioning) utilities."""

from __future__ import annotations

import numpy as np

from .ctc import ctc_loss


def intermediate_ctc_loss(tap_grids, target) -> tuple[float, list[np.ndarray]]:
    """Mean CTC loss over tapped grids; zero (with no gradients) if no taps."""
    tap_grids = list(tap_grids)
    if not tap_grids:
        return 0.0, []
    losses = []
    grads = []
    for grid in tap_grids:
        loss, grad = ctc_loss(grid, target)
        losses.append(loss)
        grads.append(grad / len(tap_grids))
    return float(sum(losses) / len(tap_grids)), grads


def combined_objective(final_loss: float, inter_loss: float, weight: float) -> float:
    """(1 - w) * final + w * intermediate."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError("intermediate weight must lie in [0, 1]")
    return (1.0 - weight) * final_loss + weight * inter_loss


def self_conditioned_forward(encoder, features: np.ndarray,
                             feedback_enabled: bool = True):
    """Forward with tap posteriors fed back into the stack.

    Returns (final grid, list of tap posterior matrices), each posterior row
    a valid distribution.
    """
    out = encoder.forward(features[None], want_taps=True,
                          feedback_enabled=feedback_enabled)
    posteriors = [np.exp(tap[0]) for tap in out.tap_log_probs]
    return out.log_probs[0], posteriors


def attach_intermediate_to_maskctc(model, tap_layers, weight: float = 0.5):
    """Enable intermediate CTC on a Mask-CTC model's encoder.

    The CTC head is shared, so no parameters are added and inference is
    untouched; only the training objective gains the intermediate term.
    """
    taps = tuple(sorted(int(t) for t in tap_layers))
    for tap in taps:
        if not 1 <= tap < len(model.encoder.blocks):
            raise ValueError(f"tap layer {tap} out of range for "
                             f"{len(model.encoder.blocks)} encoder blocks")
    model.encoder.tap_layers = taps
    model.inter_weight = weight if taps else 0.0
    return model
