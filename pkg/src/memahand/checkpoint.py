"""Binary weight container.

Layout (little-endian)::

    b"MMHD"  u32 version
    repeated until EOF:
        u16 name_len, name (UTF-8), u32 rank, u32 dims[rank], f64 payload

The run configuration (JSON bytes, one byte per float64 entry) and the step
counter travel as two reserved tensors, ``@config`` and ``@step``, so the
file stays a plain sequence of named tensors.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MMHD"
VERSION = 1
CONFIG_KEY = "@config"
STEP_KEY = "@step"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    step: int = 0


def _write_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"tensor name too long: {name[:40]}...")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def to_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    _write_tensor(buf, CONFIG_KEY, np.frombuffer(cfg, dtype=np.uint8).astype(float))
    _write_tensor(buf, STEP_KEY, np.array(float(ckpt.step)))
    for name, arr in ckpt.tensors.items():
        if name.startswith("@"):
            raise CheckpointError(f"tensor names starting with '@' are reserved: {name}")
        _write_tensor(buf, name, arr)
    return buf.getvalue()


def from_bytes(data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos, tensors = 8, {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (rank,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            size = int(np.prod(dims)) * 8
            if pos + size > len(data):
                raise CheckpointError(f"truncated payload for tensor {name}")
            tensors[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).reshape(dims).copy()
            pos += size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    cfg = tensors.pop(CONFIG_KEY, None)
    step = tensors.pop(STEP_KEY, np.array(0.0))
    config = json.loads(cfg.astype(np.uint8).tobytes().decode("utf-8")) if cfg is not None else {}
    return Checkpoint(tensors, config, int(np.asarray(step).reshape(-1)[0]))


def save(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
