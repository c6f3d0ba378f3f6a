"""Versioned binary checkpoints.

Layout: magic ``ACAM``, uint32 format version, a JSON-encoded
hyperparameter block, then each named tensor as (uint32 name length,
name bytes, uint32 ndim, uint64 dims, raw little-endian float64 data).
All integers little-endian. Tied value transforms are stored once and
re-aliased on load, so ``load(save(p))`` reproduces the parameter set
bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import Hyperparams, ModelParams

MAGIC = b"ACAM"
VERSION = 1


def _hyper_to_dict(hyper: Hyperparams) -> dict:
    return {
        "dim": hyper.dim,
        "key_dim": hyper.key_dim,
        "value_dim": hyper.value_dim,
        "num_attributes": hyper.num_attributes,
        "history_len": hyper.history_len,
        "mlp_hidden": list(hyper.mlp_hidden),
        "lambda1": hyper.lambda1,
        "lambda2": hyper.lambda2,
        "tie_kv": hyper.tie_kv,
        "attention_softmax": hyper.attention_softmax,
        "use_coattention": hyper.use_coattention,
    }


def _hyper_from_dict(blob: dict) -> Hyperparams:
    blob = dict(blob)
    blob["mlp_hidden"] = tuple(blob["mlp_hidden"])
    return Hyperparams(**blob)


def save(path: str | Path, params: ModelParams, hyper: Hyperparams) -> None:
    named = params.named()
    hyper_bytes = json.dumps(_hyper_to_dict(hyper), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(hyper_bytes)))
        fh.write(hyper_bytes)
        fh.write(struct.pack("<I", len(named)))
        for name, arr in named.items():
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ValueError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load(path: str | Path) -> tuple[ModelParams, Hyperparams]:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), str(path))
    if reader.take(4) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version = reader.u32()
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    hyper = _hyper_from_dict(json.loads(reader.take(reader.u32()).decode("utf-8")))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        ndim = reader.u32()
        shape = tuple(reader.u64() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(count * 8), dtype="<f8")
        arrays[name] = data.reshape(shape).astype(np.float64)
    if reader.pos != len(reader.blob):
        raise ValueError(f"{path}: trailing bytes after last tensor")
    if hyper.tie_kv:
        for alias, source in (("w_vu", "w_ku"), ("b_vu", "b_ku"),
                              ("w_vv", "w_kv"), ("b_vv", "b_kv")):
            if alias in arrays:
                raise ValueError(
                    f"{path}: tied checkpoint unexpectedly stores {alias}")
            arrays[alias] = arrays[source]
    missing = [f.name for f in ModelParams.__dataclass_fields__.values()
               if f.name not in arrays]
    if missing:
        raise ValueError(f"{path}: checkpoint missing tensors {missing}")
    return ModelParams(**arrays), hyper
