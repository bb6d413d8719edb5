"""Checkpoint container for the U-net, its optimiser state and training identity.

Byte layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"CTFDCKPT"
    8       4     format version (u32, currently 1)
    12      4     header length H in bytes (u32)
    16      H     UTF-8 JSON header
    16+H    ...   tensors, float32 little-endian, C order, in header "tensors" order
    end-4   4     CRC-32 of every preceding byte (u32)

The header holds ``spec`` (UNetSpec as a dict), ``head``, ``epoch``,
``seed``, ``adam`` (betas, eps, step), free-form ``extra`` and the tensor
index: a list of ``{"name", "group", "shape"}`` with group one of
``param``, ``buffer``, ``adam_m``, ``adam_v``.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError
from .optim import AdamState
from .unet import UNet, UNetSpec

MAGIC = b"CTFDCKPT"
VERSION = 1
_GROUPS = ("param", "buffer", "adam_m", "adam_v")


@dataclass
class Checkpoint:
    spec: UNetSpec
    head: str
    epoch: int
    seed: int
    params: dict
    buffers: dict
    adam: AdamState = field(default_factory=AdamState)
    extra: dict = field(default_factory=dict)

    @classmethod
    def capture(cls, model: UNet, head: str, epoch: int, seed: int,
                adam: AdamState | None = None, extra: dict | None = None) -> "Checkpoint":
        copy = lambda d: {k: np.array(v, dtype=np.float32) for k, v in d.items()}
        adam = adam or AdamState()
        state = AdamState(adam.beta1, adam.beta2, adam.eps, adam.step, copy(adam.m), copy(adam.v))
        return cls(model.spec, head, int(epoch), int(seed), copy(model.named_params()),
                   copy(model.named_buffers()), state, dict(extra or {}))

    def build_model(self) -> UNet:
        model = UNet(self.spec, seed=self.seed)
        model.load_state(self.params, self.buffers)
        return model


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    tensors = []
    for group, arrays in zip(_GROUPS, (ckpt.params, ckpt.buffers, ckpt.adam.m, ckpt.adam.v)):
        for name in sorted(arrays):
            tensors.append((group, name, np.ascontiguousarray(arrays[name], dtype="<f4")))
    header = {
        "spec": ckpt.spec.to_dict(),
        "head": ckpt.head,
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "adam": {"beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2,
                 "eps": ckpt.adam.eps, "step": ckpt.adam.step},
        "extra": ckpt.extra,
        "tensors": [{"name": n, "group": g, "shape": list(a.shape)} for g, n, a in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    body = b"".join([MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
                    + [a.tobytes() for _, _, a in tensors])
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body)))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    if len(raw) < 20 or raw[:8] != MAGIC:
        raise DataError(f"{path} is not a checkpoint file")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != crc:
        raise DataError(f"{path} is corrupt (checksum mismatch)")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16:16 + hlen])
    except ValueError as exc:
        raise DataError(f"{path}: unreadable header ({exc})") from None
    groups = {g: {} for g in _GROUPS}
    pos = 16 + hlen
    for t in header["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64)) * 4
        if pos + n > len(raw) - 4:
            raise DataError(f"{path}: truncated tensor {t['name']}")
        groups[t["group"]][t["name"]] = np.frombuffer(raw, "<f4", n // 4, pos).reshape(t["shape"]).astype(np.float32)
        pos += n
    if pos != len(raw) - 4:
        raise DataError(f"{path}: trailing bytes after tensors")
    a = header["adam"]
    adam = AdamState(a["beta1"], a["beta2"], a["eps"], a["step"], groups["adam_m"], groups["adam_v"])
    return Checkpoint(UNetSpec.from_dict(header["spec"]), header["head"], header["epoch"],
                      header["seed"], groups["param"], groups["buffer"], adam, header.get("extra", {}))
