"""Training loop shared by every method: Adam with warmup scheduling,
length-bucketed batches, optional trailing-checkpoint averaging."""

from __future__ import annotations

import numpy as np

from .config import Config
from .ctc import Vocab
from .data import Dataset
from .nn.checkpoint import average_checkpoints, load_checkpoint, save_checkpoint
from .nn.models import METHODS, build_model
from .nn.optim import AdamState, adam_step

_TRAIN_TAG = 0x7EA1


def _batches(dataset: Dataset, batch_size: int, rng: np.random.Generator):
    """Length-sorted batches in shuffled order (keeps padding small)."""
    order = sorted(range(len(dataset.utterances)),
                   key=lambda i: dataset.utterances[i].features.shape[0])
    chunks = [order[i: i + batch_size] for i in range(0, len(order), batch_size)]
    for k in rng.permutation(len(chunks)):
        yield [dataset.utterances[i] for i in chunks[k]]


def train_model(method: str, dataset: Dataset, cfg: Config, log=None):
    """Train a fresh model; returns (model, per-epoch mean losses)."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if not dataset.utterances:
        raise ValueError("training set is empty")
    vocab = Vocab(dataset.spec.vocab_size)
    feature_dim = dataset.spec.feature_dim
    model = build_model(method, cfg, vocab, feature_dim)
    state = AdamState(model.params,
                      warmup=cfg.get("train.warmup"),
                      factor=cfg.get("train.lr_factor"),
                      d_model=cfg.get("model.d_model"))
    rng = np.random.default_rng((int(cfg.get("seed")), _TRAIN_TAG,
                                 METHODS.index(method)))
    epochs = int(cfg.get("train.epochs"))
    batch_size = int(cfg.get("train.batch_size"))
    keep = int(cfg.get("train.average_checkpoints") or 0)
    snapshots = []
    history = []
    for epoch in range(epochs):
        losses = []
        for batch in _batches(dataset, batch_size, rng):
            model.zero_grads()
            loss = model.loss_and_grad(batch, rng=rng)
            adam_step(model.params, model.grads, state)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if keep > 1:
            snapshots.append({k: v.copy() for k, v in model.params.items()})
            snapshots = snapshots[-keep:]
        if log:
            log(f"epoch {epoch + 1}/{epochs}: mean loss {history[-1]:.4f}")
    if len(snapshots) > 1:
        model.load_params(average_checkpoints(snapshots))
    return model, history


def model_meta(method: str, dataset_spec, cfg: Config) -> dict:
    return {
        "method": method,
        "vocab_size": dataset_spec.vocab_size,
        "feature_dim": dataset_spec.feature_dim,
        "config": cfg.data,
    }


def save_model(path, model, meta: dict) -> None:
    save_checkpoint(path, model.params, meta)


def load_model(path):
    """Rebuild a model from a checkpoint; returns (model, meta)."""
    params, meta = load_checkpoint(path)
    cfg = Config(meta["config"])
    vocab = Vocab(meta["vocab_size"])
    model = build_model(meta["method"], cfg, vocab, meta["feature_dim"])
    model.load_params(params)
    return model, meta
