"""Generator, critic, and detector network builders.

Topologies are described by a small key=value string embedded in
checkpoints, so a saved model can be rebuilt without its original config.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from ..rng import Rng
from . import engine
from .engine import Tensor
from .layers import (Conv1d, Dense, Module, ResidualBlock, bounded_output)


@dataclass(frozen=True)
class Topology:
    kind: str                 # generator | critic | detector
    frame_length: int
    latent_dim: int = 64
    cond_channels: int = 2    # 0 disables conditioning
    width: int = 16
    mid_width: int = 16
    blocks: int = 3
    cardinality: int = 4
    kernel: int = 5
    stages: int = 8           # detector only
    stem_stride: int = 2      # critic/detector front-end decimation

    def descriptor(self) -> str:
        items = asdict(self)
        return " ".join(f"{k}={items[k]}" for k in sorted(items))

    @staticmethod
    def from_descriptor(text: str) -> "Topology":
        fields = dict(item.split("=", 1) for item in text.split())
        kind = fields.pop("kind")
        return Topology(kind=kind, **{k: int(v) for k, v in fields.items()})


class Generator(Module):
    """Latent + condition -> bounded two-channel frame.

    The latent vector is projected to a full-length feature map; the
    condition frame (if any) joins as extra channels before the residual
    stack. Output activation 2*tanh(x/2) keeps samples in (-2, 2).
    """

    def __init__(self, topo: Topology, rng: Rng, dtype=np.float32):
        super().__init__()
        self.topo = topo
        self.dtype = dtype
        w, n = topo.width, topo.frame_length
        self.project = Dense(topo.latent_dim, w * n, rng.fork(0), dtype=dtype)
        in_ch = w + (2 if topo.cond_channels else 0)
        self.stem = Conv1d(in_ch, w, 1, rng.fork(1), dtype=dtype)
        self.blocks = []
        for i in range(topo.blocks):
            blk = ResidualBlock(w, topo.mid_width, topo.cardinality,
                                topo.kernel, rng.fork(10 + i), norm="batch",
                                dtype=dtype)
            setattr(self, f"block{i}", blk)
            self.blocks.append(blk)
        self.head = Conv1d(w, 2, 1, rng.fork(2), dtype=dtype)

    def forward(self, z: Tensor, cond: Tensor | None = None) -> Tensor:
        b = z.shape[0]
        h = self.project(z).reshape(b, self.topo.width, self.topo.frame_length)
        if self.topo.cond_channels:
            if cond is None:
                raise engine.ShapeMismatch("generator expects a condition frame")
            h = engine.concat([h, cond], axis=1)
        h = self.stem(h)
        for blk in self.blocks:
            h = blk(h)
        return bounded_output(self.head(h))


class Critic(Module):
    """Waveform + condition -> unbounded scalar score per example.

    Layer normalization keeps examples independent, which the per-example
    input-gradient penalty requires.
    """

    def __init__(self, topo: Topology, rng: Rng, dtype=np.float32):
        super().__init__()
        self.topo = topo
        self.dtype = dtype
        w = topo.width
        in_ch = 2 + (2 if topo.cond_channels else 0)
        self.stem = Conv1d(in_ch, w, topo.kernel, rng.fork(1),
                           stride=topo.stem_stride, dtype=dtype)
        self.blocks = []
        for i in range(topo.blocks):
            blk = ResidualBlock(w, topo.mid_width, topo.cardinality,
                                topo.kernel, rng.fork(10 + i), norm="layer",
                                dtype=dtype)
            setattr(self, f"block{i}", blk)
            self.blocks.append(blk)
        # score head sees mean- and max-free statistics: per-channel mean of
        # features and of their squares (cheap second-moment summary)
        self.head1 = Dense(2 * w, 4 * w, rng.fork(2), dtype=dtype)
        self.head2 = Dense(4 * w, 1, rng.fork(3), dtype=dtype)

    def forward(self, x: Tensor, cond: Tensor | None = None) -> Tensor:
        if self.topo.cond_channels:
            if cond is None:
                raise engine.ShapeMismatch("critic expects a condition frame")
            x = engine.concat([x, cond], axis=1)
        h = self.stem(x)
        for blk in self.blocks:
            h = blk(h)
        pooled = engine.concat([h.mean(axis=2), (h * h).mean(axis=2)], axis=1)
        return self.head2(engine.relu(self.head1(pooled)))


class Detector(Module):
    """Binary radar-present classifier: residual stages with periodic
    stride-2 downsampling, global pooling, scalar logit."""

    def __init__(self, topo: Topology, rng: Rng, dtype=np.float32):
        super().__init__()
        self.topo = topo
        self.dtype = dtype
        w = topo.width
        self.stem = Conv1d(2, w, topo.kernel, rng.fork(1),
                           stride=topo.stem_stride, dtype=dtype)
        self.stages = []
        for i in range(topo.stages):
            blk = ResidualBlock(w, topo.mid_width, topo.cardinality,
                                topo.kernel, rng.fork(10 + i), norm="layer",
                                dtype=dtype)
            down = Conv1d(w, w, topo.kernel, rng.fork(100 + i), stride=2,
                          dtype=dtype) if i % 2 == 1 else None
            setattr(self, f"stage{i}", blk)
            if down is not None:
                setattr(self, f"down{i}", down)
            self.stages.append((blk, down))
        self.head = Dense(w, 1, rng.fork(2), dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = self.stem(x)
        for blk, down in self.stages:
            h = blk(h)
            if down is not None:
                h = engine.relu(down(h))
        pooled = h.mean(axis=2)
        return self.head(pooled)


def build(topo: Topology, rng: Rng, dtype=np.float32) -> Module:
    if topo.kind == "generator":
        return Generator(topo, rng, dtype)
    if topo.kind == "critic":
        return Critic(topo, rng, dtype)
    if topo.kind == "detector":
        return Detector(topo, rng, dtype)
    raise ValueError(f"unknown model kind {topo.kind!r}")
