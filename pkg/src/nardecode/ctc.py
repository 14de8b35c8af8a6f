"""CTC probability model over frame-level alignments.

Everything here operates on a log-probability lattice of shape (T, V+1)
whose last column is the blank symbol.  The forward-backward loss is exact
in the log domain (float64) so it can be checked against brute-force path
enumeration on small instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

NEG_INF = -np.inf


class InfeasibleTargetError(ValueError):
    """Raised when a target sequence cannot be aligned within T frames."""


@dataclass(frozen=True)
class Vocab:
    """Token inventory plus the two reserved symbols (blank and mask).

    Token ids are dense integers 0..size-1.  The blank occupies the last
    column of a posterior grid, so blank_id == size by construction.
    """

    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("vocab must contain at least one token")

    @property
    def tokens(self) -> range:
        return range(self.size)

    @property
    def blank_id(self) -> int:
        return self.size

    @property
    def mask_id(self) -> int:
        return self.size + 1

    @property
    def grid_classes(self) -> int:
        """Number of posterior-grid columns: tokens plus blank."""
        return self.size + 1


@dataclass(frozen=True)
class PosteriorGrid:
    """T x (V+1) natural-log probability lattice, blank in the last column."""

    log_probs: np.ndarray
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        lp = np.asarray(self.log_probs, dtype=np.float64)
        object.__setattr__(self, "log_probs", lp)
        if lp.ndim != 2 or lp.shape[0] < 1 or lp.shape[1] < 2:
            raise ValueError(f"grid must be (T, V+1) with T>=1, got {lp.shape}")
        if self.validate:
            if np.any(lp > 0.0):
                raise ValueError("log probabilities must be <= 0")
            rowsums = logsumexp_rows(lp)
            if np.any(np.abs(rowsums) > 1e-9):
                raise ValueError("grid rows must log-sum-exp to 0 within 1e-9")

    @property
    def frame_count(self) -> int:
        return self.log_probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.log_probs.shape[1]

    @property
    def blank_id(self) -> int:
        return self.log_probs.shape[1] - 1


def logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.sum(np.exp(a - m), axis=-1, keepdims=True)))[..., 0]


def _as_log_probs(grid) -> np.ndarray:
    if isinstance(grid, PosteriorGrid):
        return grid.log_probs
    return np.asarray(grid, dtype=np.float64)


def _check_alignment(frames, num_classes: int):
    for z in frames:
        if not 0 <= int(z) < num_classes:
            raise ValueError(f"alignment symbol {z} outside vocabulary of {num_classes} classes")


def collapse(frames, blank_id: int) -> tuple[int, ...]:
    """Apply the collapse map: merge consecutive duplicates, then drop blanks.

    `frames` may contain token ids and the blank; anything else is rejected.
    """
    _check_alignment(frames, blank_id + 1)
    out = []
    prev = None
    for z in frames:
        z = int(z)
        if z != prev:
            if z != blank_id:
                out.append(z)
            prev = z
    return tuple(out)


def min_frames(target) -> int:
    """Minimum T that admits an alignment: length plus adjacent repeats."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def is_feasible(target, frame_count: int) -> bool:
    return frame_count >= min_frames(target)


def enumerate_paths(target, frame_count: int, vocab: Vocab) -> set[tuple[int, ...]]:
    """Brute-force inverse collapse: all length-T alignments mapping to target.

    Exhaustive over (V+1)^T strings; intended as the oracle for small T only.
    """
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    target = tuple(int(y) for y in target)
    symbols = list(range(vocab.size)) + [vocab.blank_id]
    return {
        path
        for path in itertools.product(symbols, repeat=frame_count)
        if collapse(path, vocab.blank_id) == target
    }


def _shift_down(row: np.ndarray, k: int) -> np.ndarray:
    """Shift values toward higher indices, filling the head with -inf."""
    out = np.full_like(row, NEG_INF)
    if row.size > k:
        out[k:] = row[:-k]
    return out


def _shift_up(row: np.ndarray, k: int) -> np.ndarray:
    """Shift values toward lower indices, filling the tail with -inf."""
    out = np.full_like(row, NEG_INF)
    if row.size > k:
        out[:-k] = row[k:]
    return out


def _expand_labels(target, blank_id: int) -> np.ndarray:
    """Blank-interleaved state labels: [eps, y1, eps, y2, ..., yL, eps]."""
    ext = np.full(2 * len(target) + 1, blank_id, dtype=np.int64)
    ext[1::2] = np.asarray(target, dtype=np.int64)
    return ext


def _check_target(target, num_tokens: int, frame_count: int):
    for y in target:
        if not 0 <= int(y) < num_tokens:
            raise ValueError(f"target token {y} outside vocabulary of {num_tokens} tokens")
    if not is_feasible(target, frame_count):
        raise InfeasibleTargetError(
            f"target of length {len(target)} with {min_frames(target) - len(target)} "
            f"adjacent repeats needs >= {min_frames(target)} frames, got {frame_count}"
        )


def ctc_loss(grid, target) -> tuple[float, np.ndarray]:
    """Negative log marginal probability of `target`, with gradient.

    Returns (loss, d loss / d log_probs) where the gradient is the negated
    state-occupancy posterior from the forward-backward recursion.
    """
    lp = _as_log_probs(grid)
    T, C = lp.shape
    blank = C - 1
    target = tuple(int(y) for y in target)
    _check_target(target, blank, T)

    labels = _expand_labels(target, blank)
    S = labels.size
    emit = lp[:, labels]  # (T, S)

    # skip transition s-2 -> s allowed only into a token state differing
    # from the token two states back
    can_skip = np.zeros(S, dtype=bool)
    if S > 2:
        can_skip[2:] = (labels[2:] != blank) & (labels[2:] != labels[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        stay = alpha[t - 1]
        prev1 = _shift_down(alpha[t - 1], 1)
        prev2 = np.where(can_skip, _shift_down(alpha[t - 1], 2), NEG_INF)
        alpha[t] = np.logaddexp(np.logaddexp(stay, prev1), prev2) + emit[t]

    tail = [alpha[T - 1, S - 1]]
    if S > 1:
        tail.append(alpha[T - 1, S - 2])
    log_p = float(np.logaddexp.reduce(tail))
    loss = -log_p

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    skip_out = _shift_up(can_skip.astype(np.float64), 2) > 0.5
    for t in range(T - 2, -1, -1):
        stay = beta[t + 1]
        next1 = _shift_up(beta[t + 1], 1)
        next2 = np.where(skip_out, _shift_up(beta[t + 1], 2), NEG_INF)
        beta[t] = np.logaddexp(np.logaddexp(stay, next1), next2) + emit[t]

    # occupancy gamma_t(s); emit counted in both alpha and beta, remove once
    gamma = np.exp(alpha + beta - emit - log_p)
    grad = np.zeros_like(lp)
    np.subtract.at(grad, (slice(None), labels), gamma)
    return loss, grad


def best_path_decode(grid) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """Frame-wise argmax followed by collapse.

    Ties break toward the lowest class id.  Each surviving token's confidence
    is the maximum frame probability among the frames that produced it.
    """
    lp = _as_log_probs(grid)
    blank = lp.shape[1] - 1
    path = np.argmax(lp, axis=1)
    tokens = []
    confs = []
    prev = -1
    for t, z in enumerate(path):
        z = int(z)
        p = float(np.exp(lp[t, z]))
        if z != prev and z != blank:
            tokens.append(z)
            confs.append(p)
        elif z == prev and z != blank:
            confs[-1] = max(confs[-1], p)
        prev = z
    return tuple(tokens), tuple(confs)


def viterbi_alignment(grid, target) -> tuple[int, ...]:
    """Most probable alignment among those collapsing to `target`."""
    lp = _as_log_probs(grid)
    T, C = lp.shape
    blank = C - 1
    target = tuple(int(y) for y in target)
    _check_target(target, blank, T)

    labels = _expand_labels(target, blank)
    S = labels.size
    emit = lp[:, labels]
    can_skip = np.zeros(S, dtype=bool)
    if S > 2:
        can_skip[2:] = (labels[2:] != blank) & (labels[2:] != labels[:-2])

    score = np.full((T, S), NEG_INF)
    back = np.zeros((T, S), dtype=np.int64)
    score[0, 0] = emit[0, 0]
    if S > 1:
        score[0, 1] = emit[0, 1]
    for t in range(1, T):
        stay = score[t - 1]
        prev1 = _shift_down(score[t - 1], 1)
        prev2 = np.where(can_skip, _shift_down(score[t - 1], 2), NEG_INF)
        choices = np.stack([stay, prev1, prev2])  # ties -> smallest jump
        pick = np.argmax(choices, axis=0)
        score[t] = choices[pick, np.arange(S)] + emit[t]
        back[t] = np.arange(S) - pick

    ends = [S - 1] if S == 1 else [S - 1, S - 2]
    end = max(ends, key=lambda s: score[T - 1, s])
    if not np.isfinite(score[T - 1, end]):
        raise InfeasibleTargetError("no alignment reaches the final state")
    states = np.zeros(T, dtype=np.int64)
    states[T - 1] = end
    for t in range(T - 1, 0, -1):
        states[t - 1] = back[t, states[t]]
    return tuple(int(labels[s]) for s in states)
