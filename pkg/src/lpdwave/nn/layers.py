"""Neural layers built on the autodiff engine.

Convolutions are expressed as unfold + matmul, so every layer's backward
(and the critic's double backward) stays inside the engine's primitive set.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..rng import Rng
from . import engine
from .engine import Tensor


class Module:
    """Minimal parameter container with train/eval mode propagation."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._modules: dict[str, "Module"] = {}
        self.training = True

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self.__dict__.setdefault("_modules", {})[name] = value
        object.__setattr__(self, name, value)

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._buffers[name] = value
        return value

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = [(prefix + k, v) for k, v in self._params.items()]
        for name, mod in self._modules.items():
            out.extend(mod.named_parameters(prefix + name + "."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = [(prefix + k, v) for k, v in self._buffers.items()]
        for name, mod in self._modules.items():
            out.extend(mod.named_buffers(prefix + name + "."))
        return out

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        head, _, rest = name.partition(".")
        if rest:
            self._modules[head].set_buffer(rest, value)
        else:
            self._buffers[name] = value

    def train(self) -> "Module":
        self.training = True
        for mod in self._modules.values():
            mod.train()
        return self

    def eval(self) -> "Module":
        self.training = False
        for mod in self._modules.values():
            mod.eval()
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def param_checksum(self) -> float:
        return float(sum(np.sum(np.abs(p.data, dtype=np.float64))
                         for p in self.parameters()))


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: Rng,
                 bias: bool = True, dtype=np.float32, gain: float = 1.0):
        super().__init__()
        gen = rng.generator()
        std = gain * math.sqrt(2.0 / (in_features + out_features))
        w = gen.normal(0.0, std, size=(in_features, out_features))
        self.weight = self.add_param("weight", w.astype(dtype))
        self.bias = self.add_param("bias", np.zeros(out_features, dtype=dtype)) \
            if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = engine.matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias.reshape(1, -1)
        return out


class Conv1d(Module):
    """Grouped 1-D convolution; padding defaults to length-preserving."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: Rng, stride: int = 1, padding: Optional[int] = None,
                 groups: int = 1, bias: bool = True, dtype=np.float32):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise engine.ShapeMismatch("channels must divide groups")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups
        cin_g = in_channels // groups
        fan_in = cin_g * kernel
        gen = rng.generator()
        w = gen.normal(0.0, math.sqrt(2.0 / fan_in),
                       size=(groups, cin_g * kernel, out_channels // groups))
        self.weight = self.add_param("weight", w.astype(dtype))
        self.bias = self.add_param(
            "bias", np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        b, c, l = x.shape
        if c != self.in_channels:
            raise engine.ShapeMismatch(
                f"expected {self.in_channels} channels, got {c}")
        grp = self.groups
        cin_g = c // grp
        cout_g = self.out_channels // grp
        pointwise = (self.kernel == 1 and self.stride == 1 and self.padding == 0)
        if pointwise and grp == 1:
            flat = x.transpose((0, 2, 1)).reshape(b * l, c)
            out = engine.matmul(flat, self.weight[0])
            out = out.reshape(b, l, self.out_channels).transpose((0, 2, 1))
        else:
            if pointwise:
                win = x.reshape(b, c, l, 1)
                l_out = l
            else:
                win = engine.unfold1d(x, self.kernel, self.stride, self.padding)
                l_out = win.shape[2]
            # [B, C, Lout, K] -> [G, B*Lout, Cg*K], group-major channels
            grouped = win.reshape(b, grp, cin_g, l_out, self.kernel)
            flat = grouped.transpose((1, 0, 3, 2, 4)).reshape(
                grp, b * l_out, cin_g * self.kernel)
            og = engine.bmm(flat, self.weight)
            out = og.reshape(grp, b, l_out, cout_g).transpose(
                (1, 0, 3, 2)).reshape(b, self.out_channels, l_out)
        if self.bias is not None:
            out = out + self.bias.reshape(1, -1, 1)
        return out


class BatchNorm1d(Module):
    """Per-channel normalization over (batch, length) with running stats."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = self.add_param("gamma", np.ones((1, channels, 1), dtype=dtype))
        self.beta = self.add_param("beta", np.zeros((1, channels, 1), dtype=dtype))
        self.add_buffer("running_mean", np.zeros((1, channels, 1), dtype=dtype))
        self.add_buffer("running_var", np.ones((1, channels, 1), dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            mu = x.mean(axis=(0, 2), keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=(0, 2), keepdims=True)
            m = self.momentum
            self._buffers["running_mean"] = (
                (1 - m) * self._buffers["running_mean"] + m * mu.data
            ).astype(x.dtype)
            self._buffers["running_var"] = (
                (1 - m) * self._buffers["running_var"] + m * var.data
            ).astype(x.dtype)
        else:
            mu = Tensor(self._buffers["running_mean"])
            var = Tensor(self._buffers["running_var"])
            centered = x - mu
        inv = engine.power(var + np.asarray(self.eps, dtype=x.dtype), -0.5)
        return centered * inv * self.gamma + self.beta


class LayerNorm(Module):
    """Per-example normalization over (channels, length); no cross-example
    coupling, which keeps the per-example input-gradient penalty valid."""

    def __init__(self, channels: int, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.gamma = self.add_param("gamma", np.ones((1, channels, 1), dtype=dtype))
        self.beta = self.add_param("beta", np.zeros((1, channels, 1), dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=(1, 2), keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=(1, 2), keepdims=True)
        inv = engine.power(var + np.asarray(self.eps, dtype=x.dtype), -0.5)
        return centered * inv * self.gamma + self.beta


def _make_norm(kind: str, channels: int, dtype) -> Module:
    if kind == "batch":
        return BatchNorm1d(channels, dtype=dtype)
    if kind == "layer":
        return LayerNorm(channels, dtype=dtype)
    raise ValueError(f"unknown norm kind {kind!r}")


class ResidualBlock(Module):
    """1-D aggregated-transform residual block.

    A 1x1 reduction feeds `cardinality` parallel low-width convolution
    paths (realized as one grouped convolution), then a 1x1 expansion;
    the input is added back through a skip connection. Each convolution
    is followed by normalization and ReLU.
    """

    def __init__(self, channels: int, mid_channels: int, cardinality: int,
                 kernel: int, rng: Rng, norm: str = "batch",
                 dtype=np.float32):
        super().__init__()
        self.reduce = Conv1d(channels, mid_channels, 1, rng.fork(0), dtype=dtype)
        self.norm1 = _make_norm(norm, mid_channels, dtype)
        self.grouped = Conv1d(mid_channels, mid_channels, kernel, rng.fork(1),
                              groups=cardinality, dtype=dtype)
        self.norm2 = _make_norm(norm, mid_channels, dtype)
        self.expand = Conv1d(mid_channels, channels, 1, rng.fork(2), dtype=dtype)
        self.norm3 = _make_norm(norm, channels, dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = engine.relu(self.norm1(self.reduce(x)))
        h = engine.relu(self.norm2(self.grouped(h)))
        h = self.norm3(self.expand(h))
        return engine.relu(x + h)


def bounded_output(x: Tensor) -> Tensor:
    """2*tanh(x/2): output samples stay strictly inside (-2, 2)."""
    half = np.asarray(0.5, dtype=x.dtype)
    two = np.asarray(2.0, dtype=x.dtype)
    return engine.mul(engine.tanh(engine.mul(x, Tensor(half))), Tensor(two))
