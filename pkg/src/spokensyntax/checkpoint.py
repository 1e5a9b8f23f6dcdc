"""Versioned flat binary checkpoints of named float64 tensors.

Layout (little-endian)::

    b"SSCKPT\\0\\0"       8-byte magic
    u32 version          currently 1
    u32 meta_len         followed by meta_len bytes of UTF-8 JSON
    u32 n_tensors
    per tensor, sorted by name:
        u16 name_len, name (UTF-8), u8 ndim, ndim * u32 dims,
        prod(dims) * f64 row-major
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SSCKPT\0\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    out = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes,
           struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    meta = json.loads(data[pos:pos + meta_len].decode())
    pos += meta_len
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + ln].decode()
        pos += ln
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(data, "<f8", count, pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    if pos != len(data):
        raise CheckpointError("trailing bytes in checkpoint")
    return tensors, meta


def save(path, tensors, meta=None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode(tensors, meta))


def load(path):
    return decode(Path(path).read_bytes())


def save_model(model, path) -> None:
    from .parser import GroundedParser
    assert isinstance(model, GroundedParser)
    meta = {"kind": "parser", "hyper": model.hyper.to_dict(), "baseline": model.baseline,
            "step": model.step}
    save(path, model.params, meta)


def load_model(path):
    from .core import HyperParams
    from .parser import GroundedParser
    tensors, meta = load(path)
    if meta.get("kind") != "parser":
        raise CheckpointError(f"{path} is not a parser checkpoint")
    return GroundedParser(tensors, HyperParams.from_dict(meta["hyper"]), meta["baseline"], meta["step"])
