"""Alignment corruption for denoising-style refinement training.

The corruption works frame-by-frame so the alignment length never changes:
substitutions draw a uniform symbol (blank included), deletions blank the
frame, insertions copy the previous frame's label forward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctc import best_path_decode, collapse, ctc_loss


@dataclass(frozen=True)
class NoiseSpec:
    sub_rate: float = 0.15
    del_rate: float = 0.05
    ins_rate: float = 0.05

    def __post_init__(self):
        rates = (self.sub_rate, self.del_rate, self.ins_rate)
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise ValueError("noise rates must lie in [0, 1]")
        if sum(rates) > 1.0 + 1e-12:
            raise ValueError("noise rates must sum to at most 1")


def corrupt_alignment(frames, spec: NoiseSpec, rng: np.random.Generator,
                      num_classes: int) -> tuple[int, ...]:
    """Apply per-frame noise to an alignment over `num_classes` symbols
    (tokens plus blank, blank being the last id)."""
    frames = [int(z) for z in frames]
    blank = num_classes - 1
    draws = rng.random(len(frames))
    subs = rng.integers(0, num_classes, size=len(frames))
    out = []
    for t, z in enumerate(frames):
        u = draws[t]
        if u < spec.sub_rate:
            out.append(int(subs[t]))
        elif u < spec.sub_rate + spec.del_rate:
            out.append(blank)
        elif u < spec.sub_rate + spec.del_rate + spec.ins_rate and t > 0:
            out.append(frames[t - 1])
        else:
            out.append(z)
    return tuple(out)


def align_denoise_loss(decoder_grid, target) -> tuple[float, np.ndarray]:
    """CTC loss of the denoising decoder's frame grid against the target."""
    return ctc_loss(decoder_grid, target)


def denoise_decode(encoder_grid, decoder) -> tuple[tuple[int, ...], int]:
    """Single-pass refinement: feed the encoder's argmax alignment to the
    decoder (`decoder(alignment) -> (T, V+1) log-probs`) and collapse its
    best path.  Returns (tokens, decoder calls)."""
    lp = np.asarray(encoder_grid.log_probs if hasattr(encoder_grid, "log_probs")
                    else encoder_grid, dtype=np.float64)
    alignment = tuple(int(z) for z in np.argmax(lp, axis=1))
    refined = np.asarray(decoder(alignment), dtype=np.float64)
    tokens, _ = best_path_decode(refined)
    return tokens, 1


__all__ = ["NoiseSpec", "align_denoise_loss", "collapse", "corrupt_alignment",
           "denoise_decode"]
