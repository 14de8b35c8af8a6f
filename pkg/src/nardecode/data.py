"""Synthetic frame-to-token task: monotonic token-to-frame expansion with
duration jitter, additive feature noise, and confusable prototypes.

Transcripts follow a fixed first-order Markov chain derived from the task
seed, so output tokens carry real context information: methods that model
token dependencies (masked refinement, self-conditioning) have something to
exploit beyond per-frame acoustics.  Frame emissions occasionally swap to a
nearest-neighbour prototype, which makes substitution errors the dominant
failure mode of context-free decoding.

Everything is a pure function of (spec, count): per-utterance generators are
seeded from (seed, index), so sharding never changes the output.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import asdict, dataclass, replace

import numpy as np

_CODEBOOK_TAG = 0xC0DEB00C
_CHAIN_TAG = 0xCA11
_SUCCESSORS = 4
_TAIL_MASS = 0.25


@dataclass(frozen=True)
class TaskSpec:
    vocab_size: int = 30
    min_len: int = 3
    max_len: int = 20
    min_duration: int = 2
    max_duration: int = 6
    feature_dim: int = 16
    noise_sigma: float = 0.3
    confusability: float = 0.05
    seed: int = 0
    tail_max_len: int = 0   # > 0 adds a heavy upper tail to the length draw

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("need at least two tokens")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ValueError("bad length range")
        if self.min_duration < 1 or self.max_duration < self.min_duration:
            raise ValueError("durations must be >= 1 and ordered")
        if self.noise_sigma < 0 or not 0 <= self.confusability <= 1:
            raise ValueError("bad noise settings")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "TaskSpec":
        return cls(**data)


@dataclass
class Utterance:
    uid: str
    features: np.ndarray           # (T, D) float32 on disk, float64 in memory
    transcript: tuple[int, ...]
    spans: tuple[tuple[int, int, int], ...] | None = None  # (token, start, end)


@dataclass
class Dataset:
    spec: TaskSpec
    utterances: list[Utterance]

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)


def long_tail_spec(base: TaskSpec) -> TaskSpec:
    """Same task, but lengths gain a heavy upper tail reaching 8x the base
    maximum (the body of the distribution is untouched)."""
    return replace(base, tail_max_len=8 * base.max_len)


def codebook(spec: TaskSpec) -> np.ndarray:
    rng = np.random.default_rng((spec.seed, _CODEBOOK_TAG))
    return rng.normal(size=(spec.vocab_size, spec.feature_dim))


def confusion_partners(spec: TaskSpec) -> np.ndarray:
    """Nearest-neighbour prototype for each token (ties to the lowest id)."""
    book = codebook(spec)
    d2 = ((book[:, None, :] - book[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    return np.argmin(d2, axis=1)


def transition_matrix(spec: TaskSpec) -> np.ndarray:
    """Sparse-ish Markov chain over tokens, fixed by the seed.

    Each token gets a handful of plausible successors with decaying
    probabilities; self-transitions are excluded when frames-per-token can
    be 1, keeping every transcript CTC-feasible at any duration draw.
    """
    rng = np.random.default_rng((spec.seed, _CHAIN_TAG))
    V = spec.vocab_size
    probs = np.zeros((V, V))
    weights = np.array([0.4, 0.3, 0.2, 0.1][:_SUCCESSORS])
    weights = weights / weights.sum()
    allow_self = spec.min_duration >= 2
    for tok in range(V):
        pool = [t for t in range(V) if allow_self or t != tok]
        succ = rng.choice(pool, size=min(_SUCCESSORS, len(pool)), replace=False)
        for s, w in zip(succ, weights):
            probs[tok, s] = w
        probs[tok] /= probs[tok].sum()
    return probs


def _sample_length(spec: TaskSpec, rng: np.random.Generator) -> int:
    if spec.tail_max_len > spec.max_len and rng.random() < _TAIL_MASS:
        return int(rng.integers(spec.max_len + 1, spec.tail_max_len + 1))
    return int(rng.integers(spec.min_len, spec.max_len + 1))


def _sample_transcript(spec: TaskSpec, trans: np.ndarray,
                       rng: np.random.Generator) -> tuple[int, ...]:
    length = _sample_length(spec, rng)
    tokens = [int(rng.integers(0, spec.vocab_size))]
    for _ in range(length - 1):
        tokens.append(int(rng.choice(spec.vocab_size, p=trans[tokens[-1]])))
    return tuple(tokens)


def make_utterance(spec: TaskSpec, index: int, book: np.ndarray,
                   partners: np.ndarray, trans: np.ndarray) -> Utterance:
    rng = np.random.default_rng((spec.seed, index))
    transcript = _sample_transcript(spec, trans, rng)
    durations = rng.integers(spec.min_duration, spec.max_duration + 1,
                             size=len(transcript))
    T = int(durations.sum())
    feats = np.empty((T, spec.feature_dim))
    spans = []
    t = 0
    for tok, dur in zip(transcript, durations):
        for _ in range(int(dur)):
            emit = tok
            if spec.confusability > 0 and rng.random() < spec.confusability:
                emit = int(partners[tok])
            feats[t] = book[emit]
            t += 1
        spans.append((tok, t - int(dur), t))
    if spec.noise_sigma > 0:
        feats = feats + rng.normal(0.0, spec.noise_sigma, size=feats.shape)
    feats = feats.astype("<f4")
    repeats = sum(1 for a, b in zip(transcript, transcript[1:]) if a == b)
    assert T >= len(transcript) + repeats, "generated pair is CTC-infeasible"
    return Utterance(uid=f"utt-{index:06d}", features=feats.astype(np.float64),
                     transcript=transcript, spans=tuple(spans))


def generate(spec: TaskSpec, count: int) -> Dataset:
    book = codebook(spec)
    partners = confusion_partners(spec)
    trans = transition_matrix(spec)
    utts = [make_utterance(spec, i, book, partners, trans) for i in range(count)]
    return Dataset(spec, utts)


def split(dataset: Dataset, ratios: tuple[float, float, float]
          ) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic, disjoint, exhaustive partition by hashed utterance id."""
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError("need three non-negative ratios")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    buckets = ([], [], [])
    r0, r1 = ratios[0], ratios[0] + ratios[1]
    for utt in dataset:
        digest = hashlib.sha256(utt.uid.encode()).digest()
        u = int.from_bytes(digest[:8], "big") / 2**64
        buckets[0 if u < r0 else 1 if u < r1 else 2].append(utt)
    return tuple(Dataset(dataset.spec, b) for b in buckets)


def _encode_features(feats: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(feats.astype("<f4")).tobytes()).decode()


def _decode_features(blob: str, t: int, d: int) -> np.ndarray:
    raw = base64.b64decode(blob)
    return np.frombuffer(raw, dtype="<f4").reshape(t, d).astype(np.float64)


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w") as fh:
        header = {"format": "nar-decode-dataset", "version": 1,
                  "spec": dataset.spec.to_json()}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for utt in dataset:
            row = {"id": utt.uid,
                   "transcript": list(utt.transcript),
                   "features": _encode_features(utt.features),
                   "t": int(utt.features.shape[0]),
                   "d": int(utt.features.shape[1])}
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != "nar-decode-dataset":
            raise ValueError(f"{path}: missing dataset header line")
        spec = TaskSpec.from_json(header["spec"])
        utts = []
        for line in fh:
            row = json.loads(line)
            feats = _decode_features(row["features"], row["t"], row["d"])
            utts.append(Utterance(uid=row["id"], features=feats,
                                  transcript=tuple(row["transcript"])))
    return Dataset(spec, utts)
