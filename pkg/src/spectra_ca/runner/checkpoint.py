"""Binary checkpoints.

Layout (all integers little-endian)::

    b"SPCA"            magic
    u32                format version (1)
    u64                epoch
    u32 + bytes        config text (UTF-8)
    u32 + bytes        RNG state, JSON (UTF-8, sorted keys)
    u32 + bytes        metadata, JSON (UTF-8, sorted keys)
    u32                number of tensors, then per tensor:
        u16 + bytes    name (UTF-8)
        u8             rank
        u64 * rank     dims
        f64 * prod     payload, C order

Tensors are written in insertion order, so save -> load -> save reproduces
the file byte for byte.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from ..errors import FormatError

MAGIC = b"SPCA"
VERSION = 1


@dataclass
class Checkpoint:
    epoch: int
    config_text: str
    rng_state: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def encode_checkpoint(ck: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<IQ", VERSION, ck.epoch)]
    for blob in (ck.config_text.encode(), _json(ck.rng_state), _json(ck.meta)):
        parts += [struct.pack("<I", len(blob)), blob]
    parts.append(struct.pack("<I", len(ck.tensors)))
    for name, arr in ck.tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        key = name.encode()
        if len(key) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        parts += [struct.pack("<H", len(key)), key, struct.pack("<B", arr.ndim),
                  struct.pack(f"<{arr.ndim}Q", *arr.shape), arr.tobytes()]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("incompatible file: bad checkpoint magic")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"incompatible checkpoint version {version} (expected {VERSION})")
    (epoch,) = r.unpack("<Q")
    blobs = []
    for _ in range(3):
        (n,) = r.unpack("<I")
        blobs.append(r.take(n))
    try:
        config_text = blobs[0].decode()
        rng_state, meta = json.loads(blobs[1]), json.loads(blobs[2])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from None
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode()
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}Q")
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        tensors[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(epoch, config_text, rng_state, tensors, meta)


def atomic_write(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, ck: Checkpoint) -> None:
    atomic_write(path, encode_checkpoint(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
