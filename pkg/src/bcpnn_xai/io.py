"""Persistence and interchange: snapshots, datasets, reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import Network, NetworkConfig, StackedNetwork, TraceState, one_hot
from .errors import ConfigurationError, SchemaError

MAGIC = b"BCPNNXAI"
FORMAT_VERSION = 1
FLOAT_DIGITS = 10
_ARRAYS = ("p_pre", "p_post", "p_joint", "mask", "tracked", "p_rec")


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# --------------------------------------------------------------------------
# Snapshots


def snapshot_bytes(model: Union[Network, StackedNetwork]) -> bytes:
    """Versioned binary snapshot: magic, version, header length, JSON header, float64 arrays."""
    layers = model.layers if isinstance(model, StackedNetwork) else [model]
    header_layers = []
    chunks = []
    offset = 0
    for layer in layers:
        tr = layer.traces
        arrays = []
        for name in _ARRAYS:
            arr = getattr(tr, name)
            if arr is None:
                continue
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            arrays.append({"name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(data)
            offset += len(data)
        header_layers.append({
            "config": layer.config.to_dict(),
            "arrays": arrays,
            "update_count": int(tr.update_count),
        })
    header = json.dumps(
        {"layers": header_layers, "stacked": isinstance(model, StackedNetwork)},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def load_snapshot_bytes(data: bytes) -> Union[Network, StackedNetwork]:
    if data[: len(MAGIC)] != MAGIC:
        raise SchemaError("not a model snapshot (bad magic)")
    version, hlen = struct.unpack("<II", data[len(MAGIC): len(MAGIC) + 8])
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported snapshot format version {version}")
    start = len(MAGIC) + 8
    header = json.loads(data[start: start + hlen].decode("utf-8"))
    body = data[start + hlen:]
    layers = []
    for lh in header["layers"]:
        config = NetworkConfig.from_dict(lh["config"])
        arrs = {}
        for a in lh["arrays"]:
            n = int(np.prod(a["shape"])) * 8
            arrs[a["name"]] = np.frombuffer(body[a["offset"]: a["offset"] + n], dtype="<f8").reshape(a["shape"]).astype(np.float64)
        traces = TraceState(
            arrs["p_pre"], arrs["p_post"], arrs["p_joint"], arrs["mask"].astype(bool),
            arrs["tracked"].astype(bool), int(lh["update_count"]), arrs.get("p_rec"),
        )
        layers.append(Network(config, traces))
    if header.get("stacked"):
        return StackedNetwork(layers)
    return layers[0]


def save_snapshot(model, path) -> str:
    data = snapshot_bytes(model)
    Path(path).write_bytes(data)
    return sha256(data)


def load_snapshot(path):
    return load_snapshot_bytes(Path(path).read_bytes())


def model_digest(model) -> str:
    return sha256(snapshot_bytes(model))


# --------------------------------------------------------------------------
# Config and datasets


def load_config(path) -> NetworkConfig:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read config {path}: {exc}") from None
    try:
        return NetworkConfig.from_dict(d)
    except (ConfigurationError, TypeError, KeyError) as exc:
        raise SchemaError(f"invalid config {path}: {exc}") from None


@dataclass
class Dataset:
    states: np.ndarray
    labels: Optional[np.ndarray]
    X: np.ndarray
    digest: str


def read_dataset(path, config: NetworkConfig, require_labels: bool = False) -> Dataset:
    """Read a header-bearing CSV whose columns are the declared attributes.

    Values must be declared state labels.  The label column, if present, is
    named after the label hypercolumn and holds its state labels.
    """
    raw = Path(path).read_bytes()
    rows = list(csv.reader(io.StringIO(raw.decode("utf-8"))))
    if not rows:
        raise SchemaError(f"dataset {path} is empty", [])
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    diags = []
    cols = {}
    for i, name in enumerate(config.input_names):
        if name not in header:
            diags.append({"column": name, "problem": "missing column for ontology attribute"})
        else:
            cols[i] = header.index(name)
    label_name = config.hidden_names[config.label_hypercolumn]
    label_col = header.index(label_name) if label_name in header else None
    if require_labels and label_col is None:
        diags.append({"column": label_name, "problem": "missing label column"})
    if diags:
        missing = ", ".join(d["column"] for d in diags)
        raise SchemaError(f"dataset does not match the ontology; unmatched: {missing}", diags)

    states = np.empty((len(body), config.n_input_hc), dtype=np.int64)
    labels = np.empty(len(body), dtype=np.int64) if label_col is not None else None
    lookup = [{s: m for m, s in enumerate(st)} for st in config.input_states]
    label_lookup = {s: k for k, s in enumerate(config.hidden_states[config.label_hypercolumn])}
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            diags.append({"row": r, "problem": f"expected {len(header)} fields, got {len(row)}"})
            continue
        for i, c in cols.items():
            v = row[c].strip()
            if v not in lookup[i]:
                diags.append({"row": r, "column": config.input_names[i], "problem": f"undeclared state {v!r}"})
            else:
                states[r - 2, i] = lookup[i][v]
        if label_col is not None:
            v = row[label_col].strip()
            if v not in label_lookup:
                diags.append({"row": r, "column": label_name, "problem": f"undeclared label {v!r}"})
            else:
                labels[r - 2] = label_lookup[v]
    if diags:
        raise SchemaError(f"{len(diags)} value(s) do not match the declared states", diags)
    return Dataset(states, labels, one_hot(states, config.input_sizes), sha256(raw))


def write_dataset(path, config: NetworkConfig, states, labels=None) -> None:
    label_name = config.hidden_names[config.label_hypercolumn]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(config.input_names) + ([label_name] if labels is not None else []))
        for n, row in enumerate(np.asarray(states)):
            vals = [config.input_states[i][int(m)] for i, m in enumerate(row)]
            if labels is not None:
                vals.append(config.hidden_states[config.label_hypercolumn][int(labels[n])])
            w.writerow(vals)


def parse_query(text: str, config: NetworkConfig) -> np.ndarray:
    """``"Attr=state,Attr=state"`` to a one-hot input vector."""
    given = {}
    for part in text.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise ConfigurationError(f"query term {part!r} is not Attr=state")
        k, v = part.split("=", 1)
        given[k.strip()] = v.strip()
    states = []
    for name, st in zip(config.input_names, config.input_states):
        if name not in given:
            raise ConfigurationError(f"query gives no state for attribute {name!r}")
        if given[name] not in st:
            raise ConfigurationError(f"attribute {name!r} has no state {given[name]!r}")
        states.append(st.index(given.pop(name)))
    if given:
        raise ConfigurationError(f"query names unknown attributes {sorted(given)}")
    return one_hot(states, config.input_sizes)


# --------------------------------------------------------------------------
# Reports


def clean(obj):
    """JSON-safe copy: rounded floats, ``inf``/``nan`` as strings, arrays as lists."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        x = round(x, FLOAT_DIGITS)
        return 0.0 if x == 0 else x
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(clean(report), indent=2, ensure_ascii=False) + "\n"


def jsonl(records) -> str:
    return "".join(json.dumps(clean(r), sort_keys=True) + "\n" for r in records)


def trajectory_lines(trajectory, config: NetworkConfig) -> str:
    """One JSON record per settling step: ``{"t": t, "pi": {"hc=state": value}}``."""
    names = [f"{n}={s}" for n, st in zip(config.hidden_names, config.hidden_states) for s in st]
    return jsonl({"t": t, "pi": dict(zip(names, row))} for t, row in enumerate(np.asarray(trajectory)))
