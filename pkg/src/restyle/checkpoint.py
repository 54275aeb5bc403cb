"""Byte-stable checkpoint container.

Layout: magic, format version, a canonical-JSON header (sorted keys), then
each parameter sorted by name as (name, shape, row-major float64 little-endian
values). Two saves of identical content produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from restyle.autodiff import Tensor

MAGIC = b"RSTYCKPT"
VERSION = 1


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def params_hash(params: dict[str, Tensor]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(params[name].values, dtype="<f8").tobytes())
    return h.hexdigest()


def file_hash(path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def save_checkpoint(path, params: dict[str, Tensor], header: dict) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        hblob = json.dumps(header, sort_keys=True, separators=(",", ":"), default=str).encode("utf-8")
        f.write(struct.pack("<I", len(hblob)))
        f.write(hblob)
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            nblob = name.encode("utf-8")
            f.write(struct.pack("<I", len(nblob)))
            f.write(nblob)
            shape = params[name].values.shape
            f.write(struct.pack("<I", len(shape)))
            f.write(struct.pack(f"<{len(shape)}q", *shape))
            f.write(np.ascontiguousarray(params[name].values, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"checkpoint {path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"checkpoint {path}: unsupported version {version}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        (count,) = struct.unpack("<I", f.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}q", f.read(8 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            buf = np.frombuffer(f.read(8 * n), dtype="<f8").astype(np.float64)
            arrays[name] = buf.reshape(shape)
    return header, arrays


def restore_params(params: dict[str, Tensor], arrays: dict[str, np.ndarray]) -> None:
    missing = sorted(set(params) - set(arrays))
    extra = sorted(set(arrays) - set(params))
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing={missing} unexpected={extra}")
    for name, p in params.items():
        if p.values.shape != arrays[name].shape:
            raise ValueError(
                f"checkpoint mismatch for {name}: shape {arrays[name].shape} vs {p.values.shape}")
        p.values[...] = arrays[name]
