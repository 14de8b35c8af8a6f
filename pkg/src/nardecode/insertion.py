"""Insertion-order machinery: the balanced-binary-tree schedule, the
slot-level training loss, and parallel insertion decoding.

A slot model is a callable `model(tokens) -> (len(tokens)+1, V+1) log-probs`
whose last class means "this slot is finished".  A joint model additionally
returns a conditioned CTC grid: `model(tokens) -> (slot_log_probs, grid)`.
"""

from __future__ import annotations

import math
from bisect import bisect_left, insort
from dataclasses import dataclass

import numpy as np

from .ctc import best_path_decode


@dataclass(frozen=True)
class InsertionSchedule:
    """Per-round (slot, token) insertions; replaying them rebuilds the target."""

    rounds: tuple[tuple[tuple[int, int], ...], ...]


def bbt_schedule(target) -> InsertionSchedule:
    """Centermost-first insertion order.

    Every round inserts the midpoint of each yet-uncovered interval, with
    even intervals breaking toward the left center, giving ceil(log2(L+1))
    rounds for a length-L target.
    """
    target = tuple(int(y) for y in target)
    intervals = [(0, len(target) - 1)] if target else []
    inserted: list[int] = []
    rounds = []
    while intervals:
        pairs = []
        mids = []
        nxt = []
        for lo, hi in intervals:
            mid = (lo + hi) // 2
            pairs.append((bisect_left(inserted, mid), target[mid]))
            mids.append(mid)
            if lo <= mid - 1:
                nxt.append((lo, mid - 1))
            if mid + 1 <= hi:
                nxt.append((mid + 1, hi))
        for mid in mids:
            insort(inserted, mid)
        rounds.append(tuple(pairs))
        intervals = nxt
    return InsertionSchedule(tuple(rounds))


def apply_round(hyp, pairs) -> tuple[int, ...]:
    """Insert simultaneously: slot indices refer to gaps of the input."""
    hyp = tuple(hyp)
    slots = {}
    for slot, token in pairs:
        if not 0 <= slot <= len(hyp):
            raise ValueError(f"slot {slot} out of range for hypothesis length {len(hyp)}")
        if slot in slots:
            raise ValueError(f"two insertions into slot {slot}")
        slots[slot] = token
    out = []
    for gap in range(len(hyp) + 1):
        if gap in slots:
            out.append(int(slots[gap]))
        if gap < len(hyp):
            out.append(hyp[gap])
    return tuple(out)


def replay(schedule: InsertionSchedule) -> tuple[int, ...]:
    hyp: tuple[int, ...] = ()
    for pairs in schedule.rounds:
        hyp = apply_round(hyp, pairs)
    return hyp


def hypothesis_at(schedule: InsertionSchedule, depth: int) -> tuple[int, ...]:
    """Hypothesis after the first `depth` rounds of the schedule."""
    if not 0 <= depth <= len(schedule.rounds):
        raise ValueError(f"depth {depth} outside 0..{len(schedule.rounds)}")
    hyp: tuple[int, ...] = ()
    for pairs in schedule.rounds[:depth]:
        hyp = apply_round(hyp, pairs)
    return hyp


def insertion_loss(slot_log_probs: np.ndarray, required_pairs,
                   eos_id: int) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of one refinement step.

    `required_pairs` are the (slot, token) insertions due next; every other
    slot owes the end-of-slot symbol.
    """
    lp = np.asarray(slot_log_probs, dtype=np.float64)
    n_slots = lp.shape[0]
    grad = np.zeros_like(lp)
    required = {}
    for slot, token in required_pairs:
        if not 0 <= slot < n_slots:
            raise ValueError(f"slot {slot} misaligned with {n_slots} slots")
        required[slot] = int(token)
    loss = 0.0
    for slot in range(n_slots):
        cls = required.get(slot, eos_id)
        loss -= lp[slot, cls]
        grad[slot, cls] -= 1.0
    return float(loss), grad


def insertion_decode(slot_model, max_rounds: int, eos_id: int) -> tuple[tuple[int, ...], int]:
    """Parallel slot-argmax decoding from the empty hypothesis.

    Stops on the first round where every slot emits end-of-slot, or after
    `max_rounds` model calls.  Returns (tokens, rounds used).
    """
    hyp: tuple[int, ...] = ()
    for rounds in range(1, max_rounds + 1):
        lp = np.asarray(slot_model(hyp), dtype=np.float64)
        if lp.shape[0] != len(hyp) + 1:
            raise ValueError("slot model must emit len(hypothesis)+1 slots")
        picks = np.argmax(lp, axis=1)
        pairs = [(s, int(c)) for s, c in enumerate(picks) if int(c) != eos_id]
        if not pairs:
            return hyp, rounds
        hyp = apply_round(hyp, pairs)
    return hyp, max_rounds


def kermit_decode(joint_model, rounds_budget: int | None, eos_id: int,
                  max_rounds: int = 64) -> tuple[tuple[int, ...], int]:
    """Insertion rounds followed by best-path CTC decoding of the grid
    conditioned on the final hypothesis.

    `rounds_budget` caps the insertion rounds (0 means pure CTC decoding;
    None means insert until no slot wants a token).  The final grid always
    comes from a forward pass over the finished hypothesis, and the returned
    iteration count is the total number of model calls.
    """
    budget = max_rounds if rounds_budget is None else min(rounds_budget, max_rounds)
    hyp: tuple[int, ...] = ()
    iterations = 0
    grid = None
    for _ in range(budget):
        slot_lp, grid = joint_model(hyp)
        iterations += 1
        picks = np.argmax(np.asarray(slot_lp, dtype=np.float64), axis=1)
        pairs = [(s, int(c)) for s, c in enumerate(picks) if int(c) != eos_id]
        if not pairs:
            break
        hyp = apply_round(hyp, pairs)
        grid = None  # hypothesis moved on; grid is stale
    if grid is None:
        _, grid = joint_model(hyp)
        iterations += 1
    tokens, _ = best_path_decode(grid)
    return tokens, iterations


def bbt_round_count(length: int) -> int:
    """ceil(log2(L+1)); 0 for the empty sequence."""
    return math.ceil(math.log2(length + 1)) if length else 0
