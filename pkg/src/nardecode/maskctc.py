"""Masked-prediction refinement: CMLM loss, confidence masking, iterative
mask-predict decoding, and the length-prediction extension that lets the
output length change by deleting/inserting mask tokens.

Decoders are passed in as callables `decoder(tokens) -> (L, V) log-probs`
so these drivers stay independent of any particular network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ctc import best_path_decode


@dataclass(frozen=True)
class Hypothesis:
    """Token sequence under refinement; mask positions carry confidence 0."""

    tokens: tuple[int, ...]
    confidence: tuple[float, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.confidence):
            raise ValueError("tokens and confidence must have equal length")


@dataclass(frozen=True)
class MaskedPair:
    """Partially observed sequence plus the hidden (position, token) pairs."""

    observed: tuple[int, ...]
    hidden: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class SpanMaskedPair:
    """Observed sequence whose mask placeholders each cover a run of >= 0
    target tokens; `runs` maps placeholder position to the covered tokens."""

    observed: tuple[int, ...]
    runs: tuple[tuple[int, tuple[int, ...]], ...]

    def expand(self, mask_id: int) -> MaskedPair:
        """One mask per covered token, ground-truth length restored."""
        runs = dict(self.runs)
        observed = []
        hidden = []
        for pos, tok in enumerate(self.observed):
            if pos in runs:
                for covered in runs[pos]:
                    hidden.append((len(observed), covered))
                    observed.append(tok)
            else:
                observed.append(tok)
        return MaskedPair(tuple(observed), tuple(hidden))


def random_mask(target, rng: np.random.Generator, mask_id: int,
                count: int | None = None) -> MaskedPair:
    """Replace `count` random positions with the mask token (count drawn
    uniformly from 1..len(target) when not forced)."""
    target = tuple(int(y) for y in target)
    if not target:
        raise ValueError("cannot mask an empty target")
    if count is None:
        count = int(rng.integers(1, len(target) + 1))
    if not 1 <= count <= len(target):
        raise ValueError(f"mask count {count} out of range for length {len(target)}")
    positions = np.sort(rng.choice(len(target), size=count, replace=False))
    observed = list(target)
    hidden = []
    for p in positions:
        hidden.append((int(p), target[p]))
        observed[p] = mask_id
    return MaskedPair(tuple(observed), tuple(hidden))


def span_mask(target, rng: np.random.Generator, mask_id: int,
              span_mean: float = 2.0) -> SpanMaskedPair:
    """Mask contiguous runs so each placeholder stands for >= 0 tokens.

    Placeholders are anchored at distinct gaps and never adjacent, so a
    decoding-time merge of neighbouring masks is unambiguous.  Run lengths
    are geometric with the given mean (possibly zero: a deletable mask).
    """
    target = tuple(int(y) for y in target)
    if not target:
        raise ValueError("cannot mask an empty target")
    length = len(target)
    n_spans = int(rng.integers(1, max(2, length // 2 + 1)))
    anchors = np.sort(rng.choice(length + 1, size=min(n_spans, length + 1), replace=False))
    q = span_mean / (1.0 + span_mean)
    observed = []
    runs = []
    cursor = 0
    for j, gap in enumerate(int(a) for a in anchors):
        observed.extend(target[cursor:gap])
        limit = (int(anchors[j + 1]) - 1 if j + 1 < len(anchors) else length) - gap
        span = int(rng.geometric(1.0 - q) - 1)  # support 0, 1, 2, ...
        span = max(0, min(span, limit))
        runs.append((len(observed), tuple(target[gap: gap + span])))
        observed.append(mask_id)
        cursor = gap + span
    observed.extend(target[cursor:])
    return SpanMaskedPair(tuple(observed), tuple(runs))


def cmlm_loss(log_probs: np.ndarray, pair: MaskedPair) -> tuple[float, np.ndarray]:
    """Sum of negative log-probabilities at the hidden positions only.

    `log_probs` holds one distribution over the real vocabulary per observed
    position.  Unmasked positions contribute nothing, so their gradient is
    exactly zero.
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    grad = np.zeros_like(log_probs)
    loss = 0.0
    for pos, tok in pair.hidden:
        if not 0 <= pos < log_probs.shape[0]:
            raise ValueError(f"hidden position {pos} out of range")
        if not 0 <= tok < log_probs.shape[1]:
            raise ValueError(f"hidden token {tok} outside decoder vocabulary")
        loss -= log_probs[pos, tok]
        grad[pos, tok] -= 1.0
    return float(loss), grad


def mask_predict_fill(observed, decoder, iterations: int, mask_id: int) -> tuple[tuple[int, ...], int]:
    """Fill mask tokens easy-first over at most `iterations` passes.

    Each pass fills the ceil(#initial_masks / iterations) most confident
    remaining masks; whatever is left is filled on the final pass.  Returns
    the completed sequence and the number of decoder calls made.
    """
    hyp = [int(t) for t in observed]
    remaining = {i for i, t in enumerate(hyp) if t == mask_id}
    if not remaining:
        return tuple(hyp), 0
    if iterations < 1:
        raise ValueError("need at least one fill iteration")
    per_pass = math.ceil(len(remaining) / iterations)
    calls = 0
    for it in range(1, iterations + 1):
        if not remaining:
            break
        logp = np.asarray(decoder(tuple(hyp)), dtype=np.float64)
        calls += 1
        if logp.shape[0] != len(hyp):
            raise ValueError("decoder output length does not match hypothesis")
        if it == iterations:
            chosen = sorted(remaining)
        else:
            ranked = sorted(remaining, key=lambda p: (-logp[p].max(), p))
            chosen = ranked[:per_pass]
        for p in chosen:
            hyp[p] = int(np.argmax(logp[p]))
            remaining.discard(p)
    return tuple(hyp), calls


def mask_ctc_decode(grid, decoder, p_thr: float, iterations: int,
                    mask_id: int) -> tuple[tuple[int, ...], int]:
    """Mask-CTC inference: CTC best path, mask low-confidence tokens, then
    iterative mask prediction.  Returns (tokens, decoder calls)."""
    if not 0.0 <= p_thr <= 1.0:
        raise ValueError("confidence threshold must be in [0, 1]")
    tokens, confs = best_path_decode(grid)
    observed = tuple(mask_id if c < p_thr else t for t, c in zip(tokens, confs))
    return mask_predict_fill(observed, decoder, iterations, mask_id)


def length_labels(target, pair: SpanMaskedPair,
                  max_classes: int | None = None) -> tuple[int, ...]:
    """Per-placeholder length of the target run it covers.

    Validates that interleaving the observed tokens with the runs
    reconstructs the target exactly.
    """
    target = tuple(int(y) for y in target)
    runs = dict(pair.runs)
    rebuilt = []
    for pos, tok in enumerate(pair.observed):
        if pos in runs:
            rebuilt.extend(runs[pos])
        else:
            rebuilt.append(tok)
    if tuple(rebuilt) != target:
        raise ValueError("masked pair does not reconstruct the target")
    labels = tuple(len(tokens) for _, tokens in pair.runs)
    if max_classes is not None:
        labels = tuple(min(n, max_classes - 1) for n in labels)
    return labels


def adjust_masks(hyp: Hypothesis, predicted_lengths, mask_id: int) -> Hypothesis:
    """Expand each mask placeholder to the predicted number of masks
    (zero deletes it); non-mask tokens pass through untouched."""
    lengths = list(predicted_lengths)
    n_masks = sum(1 for t in hyp.tokens if t == mask_id)
    if len(lengths) != n_masks:
        raise ValueError(f"{len(lengths)} lengths for {n_masks} placeholders")
    tokens = []
    confs = []
    it = iter(lengths)
    for tok, conf in zip(hyp.tokens, hyp.confidence):
        if tok == mask_id:
            n = int(next(it))
            if n < 0:
                raise ValueError("predicted length must be >= 0")
            tokens.extend([mask_id] * n)
            confs.extend([0.0] * n)
        else:
            tokens.append(tok)
            confs.append(conf)
    return Hypothesis(tuple(tokens), tuple(confs))


def improved_mask_ctc_decode(grid, decoder, length_predictor, p_thr: float,
                             iterations: int, mask_id: int) -> tuple[tuple[int, ...], int]:
    """Mask-CTC with length prediction: adjacent low-confidence tokens merge
    into one placeholder, each placeholder is resized once up front by
    `length_predictor(tokens) -> lengths`, then masks are filled as usual.

    The returned call count covers the fill passes only; the single length
    pass is bookkept by the caller.
    """
    if not 0.0 <= p_thr <= 1.0:
        raise ValueError("confidence threshold must be in [0, 1]")
    tokens, confs = best_path_decode(grid)
    merged_tokens = []
    merged_confs = []
    for t, c in zip(tokens, confs):
        if c < p_thr:
            if merged_tokens and merged_tokens[-1] == mask_id:
                continue
            merged_tokens.append(mask_id)
            merged_confs.append(0.0)
        else:
            merged_tokens.append(t)
            merged_confs.append(c)
    hyp = Hypothesis(tuple(merged_tokens), tuple(merged_confs))
    if mask_id not in hyp.tokens:
        return hyp.tokens, 0
    lengths = length_predictor(hyp.tokens)
    adjusted = adjust_masks(hyp, lengths, mask_id)
    return mask_predict_fill(adjusted.tokens, decoder, iterations, mask_id)
