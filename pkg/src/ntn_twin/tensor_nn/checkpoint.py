"""Parameter checkpoints: JSON header followed by raw little-endian float64 payloads.

Layout: 8-byte magic ``NTNCKPT1``, uint64 LE header length, UTF-8 JSON
header ``{"params": [{"name", "shape"}...], "seed", "step", "meta"}``, then
each parameter's data in header order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointMismatchError, FileFormatError

MAGIC = b"NTNCKPT1"


def save_checkpoint(path, named_params, seed=0, step=0, meta=None) -> None:
    header = {"params": [{"name": n, "shape": list(p.shape)} for n, p in named_params],
              "seed": int(seed), "step": int(step), "meta": meta or {}}
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for _, p in named_params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def read_checkpoint(path):
    """Return (header dict, {name: array})."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise FileFormatError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    arrays, pos = {}, 16 + hlen
    for entry in header["params"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        if pos + 8 * n > len(raw):
            raise FileFormatError(f"{path}: truncated payload for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(raw[pos:pos + 8 * n], dtype="<f8").reshape(entry["shape"]).copy()
        pos += 8 * n
    if pos != len(raw):
        raise FileFormatError(f"{path}: payload length mismatch")
    return header, arrays


def load_checkpoint(path, module):
    """Copy checkpoint arrays into ``module``'s parameters; names and shapes must match exactly."""
    header, arrays = read_checkpoint(path)
    named = dict(module.named_parameters())
    if set(named) != set(arrays):
        missing = sorted(set(named) ^ set(arrays))[:5]
        raise CheckpointMismatchError(f"parameter names differ from checkpoint: {missing}")
    for name, p in named.items():
        if p.shape != arrays[name].shape:
            raise CheckpointMismatchError(f"{name}: shape {p.shape} != checkpoint {arrays[name].shape}")
        p.data[...] = arrays[name]
    return header
