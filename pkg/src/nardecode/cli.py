"""Command-line interface: gen-data / train / decode / eval / bench.

Every command exits 0 on success and nonzero with a message on stderr
otherwise.  The NAR_SEED environment variable overrides config seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import data as data_mod
from .bench import bench_decode
from .config import Config
from .metrics import corpus_eval
from .reports import write_bucket_series, write_report
from .train import load_model, model_meta, save_model, train_model

METHOD_CHOICES = ("ctc", "maskctc", "imaskctc", "aligndenoise", "interctc",
                  "selfcond", "insertion", "kermit", "cifna", "ar")


def _load_spec(arg: str) -> data_mod.TaskSpec:
    path = Path(arg)
    if path.exists():
        with open(path) as fh:
            raw = json.load(fh)
    else:
        raw = json.loads(arg)
    return data_mod.TaskSpec.from_json(raw)


def _load_config(arg: str | None) -> Config:
    if not arg:
        return Config()
    return Config.from_file(arg)


def cmd_gen_data(args) -> int:
    spec = _load_spec(args.spec)
    import os
    env_seed = os.environ.get("NAR_SEED")
    if env_seed is not None:
        spec = data_mod.replace(spec, seed=int(env_seed))
    if args.long_tail:
        spec = data_mod.long_tail_spec(spec)
    dataset = data_mod.generate(spec, args.count)
    data_mod.save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} utterances to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    dataset = data_mod.load_dataset(args.data)
    model, history = train_model(args.method, dataset, cfg, log=print)
    save_model(args.ckpt, model, model_meta(args.method, dataset.spec, cfg))
    print(f"saved {args.method} checkpoint to {args.ckpt} "
          f"(final epoch loss {history[-1]:.4f})")
    return 0


def cmd_decode(args) -> int:
    model, meta = load_model(args.ckpt)
    dataset = data_mod.load_dataset(args.data)
    with open(args.out, "w") as fh:
        for utt in dataset:
            tokens, iterations = model.decode(utt.features)
            row = {"id": utt.uid, "tokens": [int(t) for t in tokens],
                   "iterations": int(iterations)}
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"decoded {len(dataset)} utterances with {meta['method']} to {args.out}")
    return 0


def _read_refs(path) -> dict[str, tuple[int, ...]]:
    with open(path) as fh:
        first = fh.readline()
        head = json.loads(first)
        refs = {}
        if isinstance(head, dict) and head.get("format") == "nar-decode-dataset":
            for line in fh:
                row = json.loads(line)
                refs[row["id"]] = tuple(row["transcript"])
        else:
            for raw in [first, *fh]:
                if not raw.strip():
                    continue
                row = json.loads(raw)
                refs[row["id"]] = tuple(row["tokens"])
        return refs


def cmd_eval(args) -> int:
    refs = _read_refs(args.ref)
    hyps = {}
    with open(args.hyp) as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                hyps[row["id"]] = tuple(row["tokens"])
    missing = sorted(set(refs) - set(hyps))
    if missing:
        raise ValueError(f"hypotheses missing for {len(missing)} ids "
                         f"(first: {missing[0]})")
    cfg = _load_config(args.config)
    pairs = [(refs[uid], hyps[uid]) for uid in sorted(refs)]
    report = corpus_eval(pairs, bucket_width=cfg.get("eval.bucket_width"))
    paths = write_report(report.to_json(), args.report, "eval_report")
    write_bucket_series(report.buckets, args.report)
    print(f"wer {report.wer:.4f} (sub {report.sub_rate:.4f} del {report.del_rate:.4f} "
          f"ins {report.ins_rate:.4f}) over {report.utterances} utterances")
    print(f"reports written to {paths['json'].parent}")
    return 0


def cmd_bench(args) -> int:
    models = {}
    for path in args.ckpts.split(","):
        model, meta = load_model(path.strip())
        name = meta["method"]
        if name in models:
            raise ValueError(f"duplicate method {name} in --ckpts")
        models[name] = model
    dataset = data_mod.load_dataset(args.data)
    report = bench_decode(models, dataset, repetitions=args.reps)
    write_report(report.to_json(), args.report, "bench_report")
    for name, m in report.methods.items():
        speed = f" speedup {m.speedup:.2f}x" if m.speedup else ""
        print(f"{name}: {m.mean_seconds * 1e3:.2f} ms/utt, "
              f"iterations mean {m.iterations_mean:.1f}{speed}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nar-decode",
        description="Non-autoregressive decoding methods on a synthetic "
                    "frame-to-token task")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="task spec JSON (path or inline)")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--long-tail", action="store_true",
                   help="stretch the length distribution for robustness studies")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one method")
    p.add_argument("--method", required=True, choices=METHOD_CHOICES)
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="config JSON path")
    p.add_argument("--ckpt", required=True, help="checkpoint output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode a dataset with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="hypothesis JSONL path")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score hypotheses against references")
    p.add_argument("--ref", required=True, help="dataset file or reference JSONL")
    p.add_argument("--hyp", required=True)
    p.add_argument("--report", required=True, help="report directory")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time decoding across checkpoints")
    p.add_argument("--ckpts", required=True, help="comma-separated checkpoints")
    p.add_argument("--data", required=True)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface a clean message, nonzero exit
        print(f"nar-decode {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
