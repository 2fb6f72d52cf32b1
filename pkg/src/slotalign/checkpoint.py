"""Versioned checkpoint container.

Layout::

    b"SLCK"  <u4 version>  <u4 header_len>  header JSON (utf-8)  tensors...

The header carries the aligner config, its hash, the training position
(epoch and Adam step) and the ordered tensor names. Each tensor is stored
as a 2-D matrix in the feature-file format (:mod:`slotalign.tensorfile`),
parameters first, then Adam first and second moments when present. A
SHA-256 over the tensor bytes guards against truncation and bit rot.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numkernel as nk
from . import tensorfile
from .aligner import AlignerConfig, AlignerModel
from .errors import FormatError, InvalidInputError

MAGIC = b"SLCK"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def config_hash(cfg: AlignerConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Checkpoint:
    model: AlignerModel
    epoch: int = 0
    optimizer: nk.Adam | None = None
    extra: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.model.cfg)


def _as_matrix(a: np.ndarray) -> np.ndarray:
    return a.reshape(1, -1) if a.ndim == 1 else a


def to_bytes(ckpt: Checkpoint) -> bytes:
    named = ckpt.model.named_params()
    names = list(named)
    tensors = [named[n].data for n in names]
    opt = ckpt.optimizer
    if opt is not None:
        tensors += [s.m for s in opt.states] + [s.v for s in opt.states]
    body = b"".join(tensorfile.pack_matrix(_as_matrix(t)) for t in tensors)
    header = {
        "format": "slotalign-checkpoint",
        "config": ckpt.model.cfg.to_dict(),
        "config_hash": ckpt.config_hash,
        "dtype": np.dtype(ckpt.model.dtype).name,
        "epoch": ckpt.epoch,
        "tensors": [[n, list(named[n].shape)] for n in names],
        "adam": None if opt is None else {
            "step_count": opt.step_count, "lr": opt.states[0].lr, "beta1": opt.states[0].beta1,
            "beta2": opt.states[0].beta2, "eps": opt.states[0].eps},
        "extra": ckpt.extra,
        "payload_sha256": hashlib.sha256(body).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + body


def from_bytes(buf: bytes) -> Checkpoint:
    if len(buf) < _PREFIX.size:
        raise FormatError("checkpoint truncated before header")
    magic, version, head_len = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size + head_len
    try:
        header = json.loads(buf[_PREFIX.size:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from None
    try:
        cfg = AlignerConfig.from_dict(header["config"])
    except (KeyError, TypeError, InvalidInputError) as exc:
        raise FormatError(f"checkpoint config is invalid: {exc}") from None
    if config_hash(cfg) != header["config_hash"]:
        raise FormatError("checkpoint config hash mismatch")
    body = buf[start:]
    if hashlib.sha256(body).hexdigest() != header["payload_sha256"]:
        raise FormatError("checkpoint payload digest mismatch")

    # initial values are overwritten below; the seed only fixes layout
    model = AlignerModel(cfg, seed=0, dtype=np.dtype(header["dtype"]))
    named = model.named_params()
    names = [n for n, _ in header["tensors"]]
    if names != list(named):
        raise FormatError("checkpoint tensors do not match the model layout")
    offset = 0

    def next_tensor(shape):
        nonlocal offset
        arr, offset = tensorfile.unpack_matrix(body, offset)
        if arr.size != int(np.prod(shape)):
            raise FormatError(f"tensor of {arr.size} values where shape {shape} was expected")
        return arr.reshape(shape).astype(model.dtype, copy=False)

    for name, shape in header["tensors"]:
        named[name].data = next_tensor(shape)
        named[name].zero_grad()
    opt = None
    if header["adam"] is not None:
        a = header["adam"]
        opt = nk.Adam(model.params(), lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"])
        for s, (_, shape) in zip(opt.states, header["tensors"]):
            s.m = next_tensor(shape)
        for s, (_, shape) in zip(opt.states, header["tensors"]):
            s.v = next_tensor(shape)
            s.step_count = a["step_count"]
    if offset != len(body):
        raise FormatError(f"{len(body) - offset} trailing bytes after the last tensor")
    return Checkpoint(model, header["epoch"], opt, header.get("extra", {}))


def save(path: str | Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    return path


def load(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
