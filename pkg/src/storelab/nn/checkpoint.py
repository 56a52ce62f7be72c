"""Versioned binary checkpoint container.

Layout (little-endian):
  magic "GSCKPT" | version u32 | seed u64 | manifest (u32 len + UTF-8 JSON)
  | n_params u32 | entries | n_opt u32 | entries
Each entry: name (u32 len + UTF-8) | rank u32 | dims u32* | float32 data.
Named entries keep checkpoints diffable in tests.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"GSCKPT"
VERSION = 1


def _pack_entry(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    parts = [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim)]
    for d in arr.shape:
        parts.append(struct.pack("<I", d))
    parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        out = self.buf[self.pos : self.pos + n]
        if len(out) != n:
            raise ValueError("truncated checkpoint")
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def entry(self) -> tuple[str, np.ndarray]:
        name = self.take(self.u32()).decode("utf-8")
        rank = self.u32()
        shape = tuple(self.u32() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(self.take(count * 4), dtype="<f4").reshape(shape)
        return name, data.astype(np.float32)


def save_checkpoint(
    path: str,
    params: dict[str, np.ndarray],
    opt_state: dict[str, np.ndarray],
    seed: int,
    manifest: dict,
) -> None:
    """Atomic write: the file appears complete or not at all."""
    manifest_raw = json.dumps(manifest, sort_keys=True).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<Q", seed),
        struct.pack("<I", len(manifest_raw)),
        manifest_raw,
        struct.pack("<I", len(params)),
    ]
    for name in sorted(params):
        parts.append(_pack_entry(name, params[name]))
    parts.append(struct.pack("<I", len(opt_state)))
    for name in sorted(opt_state):
        parts.append(_pack_entry(name, opt_state[name]))
    blob = b"".join(parts)

    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray], int, dict]:
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    seed = r.u64()
    manifest = json.loads(r.take(r.u32()).decode("utf-8"))
    params = dict(r.entry() for _ in range(r.u32()))
    opt_state = dict(r.entry() for _ in range(r.u32()))
    return params, opt_state, seed, manifest
