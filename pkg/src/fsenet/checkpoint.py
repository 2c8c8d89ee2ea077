"""Flat binary tensor archive.

Layout::

    b"FSENETCK"                  8-byte magic
    uint64 little-endian         manifest length in bytes
    manifest                     UTF-8 JSON
    blobs                        little-endian float32, back to back

The manifest holds ``config`` (model settings), free-form ``meta`` and a
``tensors`` list of ``{name, shape, dtype, offset, nbytes}`` where ``offset``
is relative to the start of the blob section.
"""

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"FSENETCK"
_DTYPE = np.dtype("<f4")


def write_archive(path, tensors, config=None, meta=None):
    """Atomically write ``tensors`` (name -> array/tensor) to ``path``."""
    path = Path(path)
    entries, blobs, offset = [], [], 0
    for name, value in tensors.items():
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        # np.array keeps 0-d scalars 0-d (ascontiguousarray would promote them)
        arr = np.array(value, dtype=_DTYPE, order="C")
        raw = arr.tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps(
        {"format": 1, "config": config or {}, "meta": meta or {}, "tensors": entries},
        sort_keys=True,
    ).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def read_archive(path):
    """Return ``(tensors, config, meta)``; tensors map name -> float32 ndarray."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    data = path.read_bytes()
    if data[:8] != MAGIC or len(data) < 16:
        raise CheckpointError(f"{path}: not an FSENet checkpoint")
    (n,) = struct.unpack("<Q", data[8:16])
    try:
        manifest = json.loads(data[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    base = 16 + n
    tensors = {}
    for e in manifest["tensors"]:
        start = base + e["offset"]
        raw = data[start : start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated blob for {e['name']}")
        tensors[e["name"]] = np.frombuffer(raw, dtype=_DTYPE).reshape(e["shape"]).copy()
    return tensors, manifest.get("config", {}), manifest.get("meta", {})


def save_model(path, model, meta=None, extra=None):
    tensors = dict(model.state_dict())
    if extra:
        tensors.update(extra)
    write_archive(path, tensors, config=model.cfg.to_dict(), meta=meta)


def load_state_into(model, tensors):
    """Copy matching entries into ``model``; raises naming the first mismatch."""
    state = model.state_dict()
    for name, ref in state.items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        arr = tensors[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError(
                f"tensor {name!r}: checkpoint shape {tuple(arr.shape)} != model shape {tuple(ref.shape)}"
            )
    with torch.no_grad():
        for name, ref in state.items():
            ref.copy_(torch.from_numpy(tensors[name]).to(ref.dtype))
    return model


def load_model(path, dtype=torch.float32):
    from .model import FSENetConfig, FSENet

    tensors, config, meta = read_archive(path)
    cfg = FSENetConfig.from_dict(config)
    model = FSENet(cfg).to(dtype)
    load_state_into(model, tensors)
    model.eval()
    return model, meta
