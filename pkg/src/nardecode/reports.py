"""Report files: nested JSON plus a flat CSV that can rebuild the JSON.

The CSV carries (path, value) rows using bracketed list indices in the path
("buckets[2].wer"), written in a fixed order, so JSON -> CSV -> JSON is
lossless for every numeric field.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path


def flatten(node, prefix="") -> list[tuple[str, object]]:
    rows = []
    if isinstance(node, dict):
        for key in node:
            sub = f"{prefix}.{key}" if prefix else str(key)
            rows.extend(flatten(node[key], sub))
    elif isinstance(node, list):
        for i, item in enumerate(node):
            rows.extend(flatten(item, f"{prefix}[{i}]"))
    else:
        rows.append((prefix, node))
    return rows


def _parse_value(text: str):
    if text == "":
        return None
    if text == "true" or text == "false":
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _tokenize(path: str) -> list:
    tokens = []
    for piece in path.split("."):
        if "[" in piece:
            name, rest = piece.split("[", 1)
            tokens.append(name)
            tokens.extend(int(i) for i in rest.rstrip("]").split("]["))
        else:
            tokens.append(piece)
    return tokens


def unflatten(rows) -> dict:
    root: dict = {}
    for path, value in rows:
        tokens = _tokenize(path)
        node = root
        for cur, nxt in zip(tokens, tokens[1:]):
            empty = [] if isinstance(nxt, int) else {}
            if isinstance(cur, int):
                while len(node) <= cur:
                    node.append(None)
                if node[cur] is None:
                    node[cur] = empty
                node = node[cur]
            else:
                node = node.setdefault(cur, empty)
        last = tokens[-1]
        if isinstance(last, int):
            while len(node) <= last:
                node.append(None)
        node[last] = value
    return root


def write_report(report_dict: dict, out_dir, stem: str) -> dict[str, Path]:
    """Write <stem>.json and <stem>.csv into `out_dir`; returns the paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / f"{stem}.json"
        csv_path = out_dir / f"{stem}.csv"
        with open(json_path, "w") as fh:
            json.dump(report_dict, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["field", "value"])
            for path, value in flatten(report_dict):
                writer.writerow([path, _format_value(value)])
    except OSError as exc:
        raise OSError(f"cannot write report under {out_dir}: {exc}") from exc
    return {"json": json_path, "csv": csv_path}


def read_report_csv(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["field", "value"]:
            raise ValueError(f"{path}: not a report CSV")
        return unflatten((field, _parse_value(value)) for field, value in reader)


def write_bucket_series(buckets: list[dict], out_dir, stem: str = "length_buckets") -> Path:
    """Plot-ready per-bucket error series (one row per non-empty bucket)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{stem}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["length_bucket", "wer", "sub", "del", "ins"])
        for b in buckets:
            writer.writerow([b["length_bucket"], _format_value(b["wer"]),
                             _format_value(b["sub_rate"]),
                             _format_value(b["del_rate"]),
                             _format_value(b["ins_rate"])])
    return path
