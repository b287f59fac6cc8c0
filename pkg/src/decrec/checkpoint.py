"""Checkpoint files: text metadata header, then named float32 blocks.

Layout: a UTF-8 header of ``key value`` lines, one ``block <name> <dims...>``
line per parameter array, an ``end`` line, then the raw little-endian
float32 data in block order. Loading and re-saving reproduces the file
byte for byte.
"""

from __future__ import annotations

import json

import numpy as np

from . import fm
from .backdoor import BackdoorConfig
from .training import DeconfHead, Model

MAGIC = "decrec-checkpoint 1"


def save_checkpoint(path, meta: dict, blocks: dict):
    """Write metadata plus named arrays (stored as little-endian float32)."""
    lines = [MAGIC]
    for key, value in meta.items():
        if isinstance(value, (dict, list)):
            value = json.dumps(value, sort_keys=True)
        lines.append(f"{key} {value}")
    arrays = {}
    for name, arr in blocks.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64), dtype="<f4")
        arrays[name] = arr
        dims = " ".join(str(d) for d in arr.shape) if arr.shape else "1"
        lines.append(f"block {name} {dims}")
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for arr in arrays.values():
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Returns (meta dict, blocks dict of float64 arrays)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.index(b"\nend\n") + len(b"\nend\n")
    header = raw[:nl].decode("utf-8").splitlines()
    if header[0] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    meta = {}
    shapes = []
    for line in header[1:]:
        if line == "end":
            break
        key, _, value = line.partition(" ")
        if key == "block":
            name, *dims = value.split(" ")
            shapes.append((name, tuple(int(d) for d in dims)))
        else:
            meta[key] = value
    blocks = {}
    offset = nl
    for name, shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        blocks[name] = arr.reshape(shape).astype(np.float64)
    return meta, blocks


def save_model(path, model: Model, extra_meta: dict | None = None):
    p = model.params
    meta = {
        "kind": model.kind,
        "dim": p.dim,
        "n_features": p.n_features,
    }
    if model.deconf is not None:
        meta["operator"] = model.deconf.config.operator
    if extra_meta:
        meta.update(extra_meta)
    blocks = {"w0": np.array([p.w0]), "w": p.w, "E": p.E}
    if isinstance(p, fm.NFMParams):
        meta["dropout"] = p.dropout
        blocks.update({"W1": p.W1, "b1": p.b1, "h": p.h})
    if model.deconf is not None:
        blocks["group_embed"] = model.deconf.v
        blocks["dbar"] = model.deconf.config.dbar
    save_checkpoint(path, meta, blocks)


def load_model(path) -> Model:
    meta, blocks = load_checkpoint(path)
    kind = meta["kind"]
    w0 = float(blocks["w0"][0])
    if kind == "nfm":
        params = fm.NFMParams(
            w0, blocks["w"], blocks["E"], blocks["W1"], blocks["b1"], blocks["h"],
            float(meta.get("dropout", 0.0)),
        )
    else:
        params = fm.FMParams(w0, blocks["w"], blocks["E"])
    deconf = None
    if "group_embed" in blocks:
        dbar = blocks["dbar"]
        dbar = dbar / dbar.sum()  # float32 storage may perturb the simplex sum
        config = BackdoorConfig(meta["operator"], dbar)
        v = blocks["group_embed"]
        deconf = DeconfHead(config, v, np.zeros_like(v))
    return Model(kind, params, deconf)
