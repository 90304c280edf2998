"""Binary training checkpoints.

Layout (all integers little-endian)::

    b"DTGA"  u32 version
    u32 n    n x tensor record            parameters
    u64 step u32 n  n x tensor record     Adam moments, paths "m/<p>" and "v/<p>"
    u32 len  JSON                         generator state
    u32 len  text                         resolved config
    u32 crc32 of every preceding byte

A tensor record is ``u32 len, utf-8 path, u32 ndim, ndim x u64 dim`` followed
by the float64 data in row-major order.
"""

import io
import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from . import config as C
from .nn import ParamStore
from .tensor import Tensor
from .trainer import TrainState

MAGIC = b"DTGA"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_records(buf, records):
    buf.write(struct.pack("<I", len(records)))
    for path, arr in records:
        name = path.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        buf.write(struct.pack("<I", len(name)))
        buf.write(name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())


def _write_blob(buf, blob):
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)


def encode(state):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    params = state.params.arrays()
    _write_records(buf, sorted(params.items()))
    buf.write(struct.pack("<Q", state.step))
    moments = [(f"m/{p}", state.m[p]) for p in sorted(state.m)]
    moments += [(f"v/{p}", state.v[p]) for p in sorted(state.v)]
    _write_records(buf, moments)
    rng_state = json.dumps(state.rng.bit_generator.state, sort_keys=True)
    _write_blob(buf, rng_state.encode("utf-8"))
    _write_blob(buf, C.resolved_text(state.config).encode("utf-8"))
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(state, path):
    """Write ``state`` to ``path`` atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(state))
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, raw, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated at byte {self.pos}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def records(self):
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (n,) = self.unpack("<I")
            path = self.take(n).decode("utf-8")
            (ndim,) = self.unpack("<I")
            shape = self.unpack(f"<{ndim}Q") if ndim else ()
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(self.take(8 * size), dtype="<f8").astype(np.float64)
            out[path] = arr.reshape(shape)
        return out

    def blob(self):
        (n,) = self.unpack("<I")
        return self.take(n)


def decode(raw, path="<bytes>"):
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (crc,) = struct.unpack("<I", raw[-4:])
    body = raw[:-4]
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    r = _Reader(body, path)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    params = r.records()
    (step,) = r.unpack("<Q")
    moments = r.records()
    rng_state = json.loads(r.blob().decode("utf-8"))
    config_text = r.blob().decode("utf-8")
    if r.pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - r.pos} trailing bytes")
    m = {p[2:]: a for p, a in moments.items() if p.startswith("m/")}
    v = {p[2:]: a for p, a in moments.items() if p.startswith("v/")}
    if set(m) != set(params) or set(v) != set(params):
        raise CheckpointError(f"{path}: optimizer moments do not match parameters")
    try:
        cfg = C.from_text(config_text)
    except C.ConfigError as exc:
        raise CheckpointError(f"{path}: bad embedded config: {exc}") from exc
    bitgen = getattr(np.random, rng_state["bit_generator"])()
    bitgen.state = rng_state
    store = ParamStore({p: Tensor(a) for p, a in params.items()})
    return TrainState(cfg, store, m, v, int(step), np.random.Generator(bitgen))


def load_checkpoint(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(raw, path)
