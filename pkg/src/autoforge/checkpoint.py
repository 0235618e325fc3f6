"""Binary checkpoint format.

Layout (all integers little-endian u32):

    magic b"AFGE" | version | meta_len | meta JSON (utf-8)
    n_tensors | per tensor: name_len, name, ndim, dims..., float32 payload
    rng_len | rng-state JSON (utf-8)

The meta JSON holds the model scale, training and augmentation config
snapshots, epoch/step counters, and the Adam step counters. Tensors carry
both network parameter sets, the Adam moments, and the batchnorm running
statistics. Save -> load -> save is byte-identical, which is what makes
interrupted-and-resumed training indistinguishable from an uninterrupted
run.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError

MAGIC = b"AFGE"
VERSION = 1


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)  # insertion order is the file order
    rng_state: dict | None = None

    @property
    def epoch(self) -> int:
        return self.meta["epoch"]

    @property
    def step(self) -> int:
        return self.meta["step"]


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    chunks.append(_pack_str(json.dumps(ckpt.meta, sort_keys=True)))
    chunks.append(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        payload = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(_pack_str(name))
        chunks.append(struct.pack("<I", payload.ndim))
        chunks.append(struct.pack(f"<{payload.ndim}I", *payload.shape))
        chunks.append(payload.tobytes())
    chunks.append(_pack_str(json.dumps(ckpt.rng_state, sort_keys=True)))
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointFormatError(f"{self.path}: truncated (wanted {n} bytes at offset {self.pos})")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointFormatError(f"{path}: {e}") from e
    r = _Reader(raw, path)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(r.string())
    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.string()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).copy()
        tensors[name] = arr
    rng_state = json.loads(r.string())
    if r.pos != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - r.pos} trailing bytes")
    return Checkpoint(meta=meta, tensors=tensors, rng_state=rng_state)
