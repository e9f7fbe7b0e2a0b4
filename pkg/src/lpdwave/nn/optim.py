"""Adam and RMSProp parameter updates."""

from __future__ import annotations

import numpy as np

from .engine import ShapeMismatch, Tensor


class Optimizer:
    def __init__(self, params: list[Tensor], lr: float):
        self.params = list(params)
        self.lr = float(lr)
        self.step_count = 0

    def _check(self, grads: list[Tensor]) -> list[np.ndarray]:
        if len(grads) != len(self.params):
            raise ShapeMismatch("gradient count does not match parameters")
        out = []
        for p, g in zip(self.params, grads):
            arr = g.data if isinstance(g, Tensor) else np.asarray(g)
            if arr.shape != p.data.shape:
                raise ShapeMismatch(
                    f"gradient shape {arr.shape} != param shape {p.data.shape}")
            out.append(arr)
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        raise NotImplementedError


class Adam(Optimizer):
    def __init__(self, params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads) -> None:
        garrs = self._check(grads)
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**t
        bias2 = 1.0 - b2**t
        for p, g, m, v in zip(self.params, garrs, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.lr == 0.0:
                continue
            mhat = m / bias1
            vhat = v / bias2
            p.data = p.data - (self.lr * mhat / (np.sqrt(vhat) + self.eps)
                               ).astype(p.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([self.step_count], dtype=np.float32)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state_arrays(self, state) -> None:
        self.step_count = int(state["step"][0])
        for i in range(len(self.params)):
            self.m[i] = state[f"m{i}"].astype(self.params[i].data.dtype)
            self.v[i] = state[f"v{i}"].astype(self.params[i].data.dtype)


class RMSProp(Optimizer):
    """w -= lr * g / (sqrt(avg) + eps) with avg = decay*avg + (1-decay)*g^2."""

    def __init__(self, params, lr: float, decay: float = 0.9, eps: float = 1e-8):
        super().__init__(params, lr)
        self.decay, self.eps = decay, eps
        self.avg = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads) -> None:
        garrs = self._check(grads)
        self.step_count += 1
        d = self.decay
        for p, g, a in zip(self.params, garrs, self.avg):
            a *= d
            a += (1.0 - d) * g * g
            if self.lr == 0.0:
                continue
            p.data = p.data - (self.lr * g / (np.sqrt(a) + self.eps)
                               ).astype(p.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([self.step_count], dtype=np.float32)}
        for i, a in enumerate(self.avg):
            out[f"avg{i}"] = a
        return out

    def load_state_arrays(self, state) -> None:
        self.step_count = int(state["step"][0])
        for i in range(len(self.params)):
            self.avg[i] = state[f"avg{i}"].astype(self.params[i].data.dtype)
