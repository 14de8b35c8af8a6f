"""Versioned checkpoint container: JSON header plus raw little-endian arrays.

The format is deliberately not a zip (no timestamps), so identical parameters
always serialize to identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"NARCKPT\x01"


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in params:
        arr = np.ascontiguousarray(params[name])
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.str if arr.dtype.byteorder != "=" else "<" + arr.dtype.str[1:],
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"version": 1, "meta": meta, "arrays": entries},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    hlen = int.from_bytes(data[len(MAGIC): len(MAGIC) + 8], "little")
    start = len(MAGIC) + 8
    header = json.loads(data[start: start + hlen].decode("utf-8"))
    if header.get("version") != 1:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    body = data[start + hlen:]
    params = {}
    for ent in header["arrays"]:
        raw = body[ent["offset"]: ent["offset"] + ent["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(ent["dtype"])).reshape(ent["shape"])
        params[ent["name"]] = arr.copy()  # writable, dtype preserved
    return params, header["meta"]


def average_checkpoints(param_sets: list[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """Element-wise arithmetic mean of identically shaped parameter sets."""
    if not param_sets:
        raise ValueError("need at least one checkpoint")
    first = param_sets[0]
    out = {}
    for name, arr in first.items():
        stack = []
        for ps in param_sets:
            if name not in ps or ps[name].shape != arr.shape:
                raise ValueError(f"checkpoint mismatch on parameter {name}")
            stack.append(ps[name])
        out[name] = np.mean(stack, axis=0)
    return out
