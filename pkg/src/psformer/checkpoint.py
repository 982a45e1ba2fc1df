"""Versioned binary checkpoints.

Layout (all integers little-endian):

    magic    8 bytes  b"PSFCKPT1"
    version  u32
    config   u64 byte length + utf-8 config text
    step     u64      optimizer step count
    nparams  u32
    per parameter:
        name   u32 length + utf-8
        ndim   u32, then ndim x u64 dims
        data   float64 raw values
    has_optim u8
    if set, per parameter in the same order: m then v, raw float64

Weights are stored as raw float64, so a save/load round-trip reproduces the
model bit-exactly.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"PSFCKPT1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    head = struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.tobytes()


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(
                f"{self.path}: truncated at byte {self.pos}, need {n} more")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        n = self.u32()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"{self.path}: bad utf-8 string") from e

    def array(self) -> np.ndarray:
        ndim = self.u32()
        if ndim > 8:
            raise CheckpointError(f"{self.path}: implausible ndim {ndim}")
        shape = struct.unpack(f"<{ndim}Q", self.take(8 * ndim)) if ndim else ()
        count = 1
        for s in shape:
            count *= s
        raw = self.take(8 * count)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def save_checkpoint(path: str, model, optimizer=None) -> None:
    from .config import serialize_config

    params = model.parameters()
    chunks = [MAGIC, struct.pack("<I", VERSION),
              struct.pack("<Q", 0)]  # placeholder, replaced below
    config_raw = serialize_config(model.config).encode("utf-8")
    chunks[2] = struct.pack("<Q", len(config_raw))
    chunks.append(config_raw)
    step = 0 if optimizer is None else optimizer.t
    chunks.append(struct.pack("<Q", step))
    chunks.append(struct.pack("<I", len(params)))
    for name, tensor in params.items():
        chunks.append(_pack_str(name))
        chunks.append(_pack_array(tensor.data))
    if optimizer is None:
        chunks.append(b"\x00")
    else:
        chunks.append(b"\x01")
        state = optimizer.state_dict()
        for name in params:
            chunks.append(_pack_array(state["m"][name]))
            chunks.append(_pack_array(state["v"][name]))

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str):
    """Returns (config, arrays, optim_state_or_None, step)."""
    from .config import parse_config

    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    config_len = r.u64()
    try:
        config_text = r.take(config_len).decode("utf-8")
    except UnicodeDecodeError as e:
        raise CheckpointError(f"{path}: bad config text") from e
    config = parse_config(config_text)
    step = r.u64()
    nparams = r.u32()
    arrays = {}
    for _ in range(nparams):
        name = r.string()
        if name in arrays:
            raise CheckpointError(f"{path}: duplicate parameter {name!r}")
        arrays[name] = r.array()
    optim_state = None
    if r.u8():
        m, v = {}, {}
        for name in arrays:
            m[name] = r.array()
            v[name] = r.array()
        optim_state = {"t": step, "m": m, "v": v}
    return config, arrays, optim_state, step


def model_from_checkpoint(path: str):
    """Rebuild the model stored at path; returns (model, optim_state, step)."""
    from .model import PSFormer

    config, arrays, optim_state, step = load_checkpoint(path)
    model = PSFormer(config)
    model.load_parameters(arrays)
    return model, optim_state, step
