"""LPDW checkpoint files.

Layout (all little-endian):
  magic "LPDW", u32 version,
  u32 topology-descriptor length, descriptor bytes (utf-8),
  u32 blob count, then per blob:
    u32 name length, name bytes,
    u32 ndim, u32 dims..., u8 kind (0 param, 1 buffer, 2 optimizer),
    float32 payload.

Round trips are bit-exact for float32 models.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional

import numpy as np

from ..rng import Rng
from .models import Module, Topology, build
from .optim import Optimizer

MAGIC = b"LPDW"
VERSION = 1

_KIND_PARAM = 0
_KIND_BUFFER = 1
_KIND_OPT = 2


class CheckpointError(ValueError):
    pass


class TopologyMismatch(CheckpointError):
    pass


def _write_blob(fh, name: str, arr: np.ndarray, kind: int) -> None:
    nb = name.encode()
    fh.write(struct.pack("<I", len(nb)))
    fh.write(nb)
    fh.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(struct.pack("<B", kind))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_blob(fh) -> tuple[str, np.ndarray, int]:
    (nlen,) = struct.unpack("<I", fh.read(4))
    name = fh.read(nlen).decode()
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
    (kind,) = struct.unpack("<B", fh.read(1))
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
    return name, arr, kind


def save(path: Path | str, model: Module,
         optimizer: Optional[Optimizer] = None) -> None:
    blobs: list[tuple[str, np.ndarray, int]] = []
    for name, p in model.named_parameters():
        blobs.append((name, p.data, _KIND_PARAM))
    for name, b in model.named_buffers():
        blobs.append((name, b, _KIND_BUFFER))
    if optimizer is not None:
        for name, arr in optimizer.state_arrays().items():
            blobs.append((name, arr, _KIND_OPT))
    desc = model.topo.descriptor().encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(desc)))
        fh.write(desc)
        fh.write(struct.pack("<I", len(blobs)))
        for name, arr, kind in blobs:
            _write_blob(fh, name, arr, kind)


def load(path: Path | str, optimizer: Optional[Optimizer] = None,
         expect_kind: Optional[str] = None) -> Module:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError("bad checkpoint magic")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (dlen,) = struct.unpack("<I", fh.read(4))
        topo = Topology.from_descriptor(fh.read(dlen).decode())
        if expect_kind is not None and topo.kind != expect_kind:
            raise TopologyMismatch(
                f"checkpoint holds a {topo.kind}, expected {expect_kind}")
        (count,) = struct.unpack("<I", fh.read(4))
        blobs = [_read_blob(fh) for _ in range(count)]
    model = build(topo, Rng(0), dtype=np.float32)
    params = dict(model.named_parameters())
    opt_state: dict[str, np.ndarray] = {}
    for name, arr, kind in blobs:
        if kind == _KIND_PARAM:
            if name not in params:
                raise TopologyMismatch(f"unexpected parameter {name!r}")
            if params[name].data.shape != arr.shape:
                raise TopologyMismatch(
                    f"parameter {name!r} shape {arr.shape} != "
                    f"{params[name].data.shape}")
            params[name].data = arr.copy()
        elif kind == _KIND_BUFFER:
            model.set_buffer(name, arr.copy())
        else:
            opt_state[name] = arr.copy()
    if optimizer is not None:
        if not opt_state:
            raise CheckpointError("checkpoint carries no optimizer state")
        optimizer.load_state_arrays(opt_state)
    return model
