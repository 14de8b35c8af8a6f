"""Error-rate accounting: Levenshtein alignment split into substitutions,
deletions, and insertions, aggregated corpus-wide and by reference length."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class EditCounts:
    sub: int
    dele: int
    ins: int

    @property
    def total(self) -> int:
        return self.sub + self.dele + self.ins


def edit_alignment(reference, hypothesis) -> EditCounts:
    """Minimal-edit counts between token sequences.

    Ties in the alignment resolve preferring substitution over a
    deletion+insertion pair, so the decomposition is deterministic.
    Deletions/insertions are counted w.r.t. the reference.
    """
    ref = [int(t) for t in reference]
    hyp = [int(t) for t in hypothesis]
    m, n = len(ref), len(hyp)
    dist = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        dist[i][0] = i
    for j in range(1, n + 1):
        dist[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            dist[i][j] = min(
                dist[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]),
                dist[i - 1][j] + 1,
                dist[i][j - 1] + 1,
            )
    sub = dele = ins = 0
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            sub += ref[i - 1] != hyp[j - 1]
            i -= 1
            j -= 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(sub, dele, ins)


@dataclass
class BucketStats:
    lo: int
    hi: int
    utterances: int = 0
    ref_tokens: int = 0
    sub: int = 0
    dele: int = 0
    ins: int = 0

    def rates(self) -> dict:
        denom = max(self.ref_tokens, 1)
        sub, dele, ins = self.sub / denom, self.dele / denom, self.ins / denom
        return {
            "length_bucket": f"{self.lo}-{self.hi}",
            "utterances": self.utterances,
            "ref_tokens": self.ref_tokens,
            "wer": sub + dele + ins,
            "sub_rate": sub,
            "del_rate": dele,
            "ins_rate": ins,
        }


@dataclass
class EvalReport:
    wer: float
    sub_rate: float
    del_rate: float
    ins_rate: float
    utterances: int
    ref_tokens: int
    buckets: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "wer": self.wer,
            "sub_rate": self.sub_rate,
            "del_rate": self.del_rate,
            "ins_rate": self.ins_rate,
            "utterances": self.utterances,
            "ref_tokens": self.ref_tokens,
            "buckets": self.buckets,
        }


def corpus_eval(pairs, bucket_width: int = 5) -> EvalReport:
    """Aggregate WER over (reference, hypothesis) pairs.

    All rates are normalized by the total reference token count; the total
    WER is defined as the sum of the three component rates, so the
    decomposition identity holds exactly.  Buckets partition utterances by
    reference length; empty buckets are omitted.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("cannot evaluate an empty corpus")
    if bucket_width < 1:
        raise ValueError("bucket width must be >= 1")
    sub = dele = ins = 0
    ref_tokens = 0
    buckets: dict[int, BucketStats] = {}
    for ref, hyp in pairs:
        counts = edit_alignment(ref, hyp)
        sub += counts.sub
        dele += counts.dele
        ins += counts.ins
        ref_tokens += len(ref)
        key = max(len(ref) - 1, 0) // bucket_width
        stats = buckets.setdefault(
            key, BucketStats(lo=key * bucket_width + 1, hi=(key + 1) * bucket_width))
        stats.utterances += 1
        stats.ref_tokens += len(ref)
        stats.sub += counts.sub
        stats.dele += counts.dele
        stats.ins += counts.ins
    denom = max(ref_tokens, 1)
    sub_rate, del_rate, ins_rate = sub / denom, dele / denom, ins / denom
    return EvalReport(
        wer=sub_rate + del_rate + ins_rate,
        sub_rate=sub_rate,
        del_rate=del_rate,
        ins_rate=ins_rate,
        utterances=len(pairs),
        ref_tokens=ref_tokens,
        buckets=[buckets[k].rates() for k in sorted(buckets)],
    )


def naive_edit_distance(reference, hypothesis) -> int:
    """Plain recursive Levenshtein, the oracle for small sequences."""
    ref, hyp = tuple(reference), tuple(hypothesis)

    def rec(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(rec(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1]),
                   rec(i - 1, j) + 1,
                   rec(i, j - 1) + 1)

    return rec(len(ref), len(hyp))
