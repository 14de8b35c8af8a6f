"""Decode benchmarking: wall-clock per utterance and iteration statistics,
with speedups quoted against the autoregressive greedy baseline.

Timing is a single-threaded loop over utterances; models and data must be
loaded before `bench_decode` is called, and the warmup pass never counts.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

AR_BASELINE = "ar"


@dataclass
class MethodBench:
    mean_seconds: float
    median_seconds: float
    iterations_mean: float
    iterations_min: int
    iterations_max: int
    speedup: float | None = None


@dataclass
class BenchReport:
    repetitions: int
    utterances: int
    baseline: str | None
    methods: dict[str, MethodBench] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "repetitions": self.repetitions,
            "utterances": self.utterances,
            "baseline": self.baseline,
            "methods": {
                name: {
                    "mean_seconds": m.mean_seconds,
                    "median_seconds": m.median_seconds,
                    "iterations_mean": m.iterations_mean,
                    "iterations_min": m.iterations_min,
                    "iterations_max": m.iterations_max,
                    "speedup": m.speedup,
                }
                for name, m in self.methods.items()
            },
        }


def bench_decode(models: dict, dataset, repetitions: int = 1,
                 on_phase=None) -> BenchReport:
    """Time `model.decode(features)` for every model over the dataset.

    One untimed warmup pass per method precedes `repetitions` timed passes;
    per-utterance times are averaged across repetitions, then summarized.
    `on_phase(name)` fires at "timing_start" / "timing_end" for callers that
    want to assert what happened inside the timed window.
    """
    if repetitions < 1:
        raise ValueError("need at least one timed repetition")
    utts = list(dataset)
    if not utts:
        raise ValueError("cannot benchmark an empty dataset")
    report = BenchReport(repetitions=repetitions, utterances=len(utts),
                         baseline=AR_BASELINE if AR_BASELINE in models else None)
    mean_times = {}
    for name, model in models.items():
        iterations = []
        for utt in utts:  # warmup, untimed
            _, iters = model.decode(utt.features)
            iterations.append(iters)
        per_utt = [0.0] * len(utts)
        if on_phase:
            on_phase("timing_start")
        for _ in range(repetitions):
            for k, utt in enumerate(utts):
                t0 = time.perf_counter()
                model.decode(utt.features)
                per_utt[k] += time.perf_counter() - t0
        if on_phase:
            on_phase("timing_end")
        per_utt = [t / repetitions for t in per_utt]
        mean_times[name] = sum(per_utt) / len(per_utt)
        report.methods[name] = MethodBench(
            mean_seconds=mean_times[name],
            median_seconds=statistics.median(per_utt),
            iterations_mean=sum(iterations) / len(iterations),
            iterations_min=min(iterations),
            iterations_max=max(iterations),
        )
    if report.baseline:
        base = mean_times[report.baseline]
        for name, m in report.methods.items():
            m.speedup = base / mean_times[name]
    return report
