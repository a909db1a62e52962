"""The ``MGRS`` checkpoint format.

All integers and floats are little-endian::

    b"MGRS"                     magic
    u32                         format version (1)
    32 bytes                    sha256 of the result-affecting config keys
    u32                         epoch (last completed)
    u32 + utf-8                 full config text
    u32                         number of parameter blobs, then per blob:
        u16 + utf-8             name
        u8                      ndim
        u32 * ndim              shape
        u64                     value count (must equal the shape product)
        f64 * count             values, row-major
    u8                          1 if Adam state follows, else 0
        u64 t; f64 beta1, beta2, eps
        u32 count, blobs        first moments (same blob layout)
        u32 count, blobs        second moments
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .optim import AdamState

MAGIC = b"MGRS"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict                       # name -> float64 array
    epoch: int = 0
    config_hash: bytes = b"\0" * 32
    config_text: str = ""
    adam: AdamState | None = None
    extra: dict = field(default_factory=dict)   # not serialised


def _pack_blobs(blobs: dict) -> bytes:
    out = [struct.pack("<I", len(blobs))]
    for name, arr in blobs.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw_name = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw_name)) + raw_name)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(struct.pack("<Q", arr.size))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def encode_checkpoint(ck: Checkpoint) -> bytes:
    if len(ck.config_hash) != 32:
        raise CheckpointError("config hash must be 32 bytes")
    text = ck.config_text.encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), ck.config_hash, struct.pack("<I", ck.epoch),
             struct.pack("<I", len(text)), text, _pack_blobs(ck.params)]
    if ck.adam is None:
        parts.append(b"\0")
    else:
        a = ck.adam
        parts.append(b"\1" + struct.pack("<Qddd", a.t, a.beta1, a.beta2, a.eps))
        parts.append(_pack_blobs(a.m))
        parts.append(_pack_blobs(a.v))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"checkpoint truncated reading {what} at byte offset {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def blobs(self) -> dict:
        (count,) = self.unpack("<I", "blob count")
        out = {}
        for _ in range(count):
            (nlen,) = self.unpack("<H", "blob name length")
            name = self.take(nlen, "blob name").decode("utf-8")
            (ndim,) = self.unpack("<B", f"{name} ndim")
            shape = self.unpack(f"<{ndim}I", f"{name} shape")
            (n,) = self.unpack("<Q", f"{name} value count")
            expected = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            if n != expected:
                raise CheckpointError(f"blob {name!r}: {n} values but shape {shape} needs {expected}")
            data = np.frombuffer(self.take(8 * n, f"{name} values"), dtype="<f8")
            if name in out:
                raise CheckpointError(f"duplicate blob {name!r}")
            out[name] = data.astype(np.float64).reshape(shape)
        return out


def decode_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r} (expected {MAGIC!r})")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (need {VERSION})")
    config_hash = r.take(32, "config hash")
    (epoch,) = r.unpack("<I", "epoch")
    (tlen,) = r.unpack("<I", "config text length")
    config_text = r.take(tlen, "config text").decode("utf-8")
    params = r.blobs()
    (has_adam,) = r.unpack("<B", "adam flag")
    adam = None
    if has_adam == 1:
        t, b1, b2, eps = r.unpack("<Qddd", "adam header")
        m = r.blobs()
        v = r.blobs()
        if set(m) != set(v):
            raise CheckpointError("adam first/second moment names differ")
        for name in m:
            if m[name].shape != v[name].shape:
                raise CheckpointError(f"adam moment shapes differ for {name!r}")
        adam = AdamState(beta1=b1, beta2=b2, eps=eps, t=t, m=m, v=v)
    elif has_adam != 0:
        raise CheckpointError(f"bad adam flag {has_adam} at byte offset {r.pos - 1}")
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after checkpoint at offset {r.pos}")
    return Checkpoint(params, epoch, config_hash, config_text, adam)


def save_checkpoint(path, ck: Checkpoint):
    """Write atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ck))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return decode_checkpoint(buf)
