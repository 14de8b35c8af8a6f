"""Nested JSON configuration with dotted-key access and package defaults."""

from __future__ import annotations

import copy
import json
import os

DEFAULTS = {
    "seed": 0,
    "model": {
        "d_model": 64,
        "d_ff": 128,
        "heads": 2,
        "enc_blocks": 4,
        "dec_blocks": 2,
        "dropout": 0.1,
    },
    "train": {
        "epochs": 2,
        "batch_size": 16,
        "warmup": 600,
        "lr_factor": 1.0,
        "average_checkpoints": 0,
    },
    "mask_ctc": {"p_thr": 0.99, "iterations": 10, "cmlm_weight": 0.7},
    "improved": {
        "span_mean": 2.0,
        "length_classes": 50,
        "iterations": 5,
        "length_weight": 0.3,
    },
    "align_denoise": {
        "sub_rate": 0.15,
        "del_rate": 0.05,
        "ins_rate": 0.05,
        "decoder_weight": 0.5,
    },
    "inter": {"layers": [], "weight": 0.5},
    "selfcond": {"enabled": False},
    "insertion": {"max_rounds": 64},
    "kermit": {"lambda": 0.5, "rounds_budget": None},
    "cif": {"threshold": 1.0, "tail_handling": "discard", "w_ctc": 0.5, "w_qua": 1.0},
    "ar": {"max_len": 200},
    "eval": {"bucket_width": 5},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


class Config:
    """Defaults overlaid with user values; `get` takes dotted paths."""

    def __init__(self, overrides: dict | None = None):
        self.data = _merge(DEFAULTS, overrides or {})
        env_seed = os.environ.get("NAR_SEED")
        if env_seed is not None:
            self.data["seed"] = int(env_seed)

    @classmethod
    def from_file(cls, path) -> "Config":
        with open(path) as fh:
            return cls(json.load(fh))

    def get(self, dotted: str, default=None):
        node = self.data
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def section(self, name: str) -> dict:
        return copy.deepcopy(self.data.get(name, {}))
