"""Binary checkpoint format.

Layout (all integers little-endian):

    magic "TRAJGPT1" | u32 version | u32 json_len | json (config + metadata)
    | u32 tensor_count | tensors | u32 crc32-of-everything-before

Each tensor: u16 name length, UTF-8 name, u8 rank, u32 per dim, then
row-major IEEE-754 float32 data. Parameters are stored alongside optimizer
moments (names prefixed "adam.m."/"adam.v."); data is float32 by format
contract regardless of the in-memory dtype.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .network import Model
from .optim import Adam

MAGIC = b"TRAJGPT1"
VERSION = 1


class CheckpointError(Exception):
    pass


class FormatError(CheckpointError):
    """Bad magic, truncated data, or checksum mismatch."""


class VersionError(CheckpointError):
    """Checkpoint written by an incompatible format version."""


def _pack_tensor(name: str, tensor: np.ndarray) -> bytes:
    data = np.ascontiguousarray(tensor, dtype="<f4")
    encoded = name.encode("utf-8")
    head = struct.pack("<H", len(encoded)) + encoded
    head += struct.pack("<B", data.ndim)
    head += struct.pack(f"<{data.ndim}I", *data.shape)
    return head + data.tobytes()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError("truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def save_checkpoint(
    path: str | Path,
    model: Model,
    optimizer: Adam | None = None,
    step: int = 0,
    extra_meta: dict | None = None,
) -> None:
    meta = {
        "config": model.config.to_dict(),
        "step": step,
        "optimizer": None,
    }
    tensors: list[tuple[str, np.ndarray]] = sorted(model.params.items())
    if optimizer is not None:
        meta["optimizer"] = {
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "step_count": optimizer.step_count,
        }
        tensors += [(f"adam.m.{k}", v) for k, v in sorted(optimizer.m.items())]
        tensors += [(f"adam.v.{k}", v) for k, v in sorted(optimizer.v.items())]
    if extra_meta:
        meta["extra"] = extra_meta

    for name, tensor in tensors:
        if not np.isfinite(tensor).all():
            raise CheckpointError(f"tensor {name} contains non-finite values")

    body = MAGIC + struct.pack("<I", VERSION)
    encoded = json.dumps(meta, sort_keys=True).encode("utf-8")
    body += struct.pack("<I", len(encoded)) + encoded
    body += struct.pack("<I", len(tensors))
    for name, tensor in tensors:
        body += _pack_tensor(name, tensor)
    body += struct.pack("<I", zlib.crc32(body))
    Path(path).write_bytes(body)


def load_checkpoint(path: str | Path) -> tuple[Model, Adam | None, dict]:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise FormatError(f"{path}: checksum mismatch")

    reader = _Reader(blob[:-4])
    reader.take(len(MAGIC))
    version = reader.u32()
    if version != VERSION:
        raise VersionError(f"{path}: format version {version}, expected {VERSION}")
    meta = json.loads(reader.take(reader.u32()).decode("utf-8"))
    n_tensors = reader.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        name = reader.take(reader.u16()).decode("utf-8")
        rank = reader.u8()
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(dims)
        tensors[name] = data.copy()
    if reader.pos != len(reader.blob):
        raise FormatError(f"{path}: trailing bytes after last tensor")

    config = ModelConfig.from_dict(meta["config"])
    params = {
        name: tensor.astype(config.np_dtype)
        for name, tensor in tensors.items()
        if not name.startswith("adam.")
    }
    expected = set(Model(config).params)
    if set(params) != expected:
        raise FormatError(
            f"{path}: parameter names do not match config "
            f"(missing {sorted(expected - set(params))[:3]}...)"
        )
    model = Model(config, params)

    optimizer = None
    if meta.get("optimizer"):
        o = meta["optimizer"]
        optimizer = Adam(model.params, o["beta1"], o["beta2"], o["eps"])
        optimizer.step_count = o["step_count"]
        for name in model.params:
            optimizer.m[name] = tensors[f"adam.m.{name}"].astype(config.np_dtype)
            optimizer.v[name] = tensors[f"adam.v.{name}"].astype(config.np_dtype)
    return model, optimizer, meta
