"""Reverse-mode automatic differentiation over numpy arrays.

Every primitive's backward rule is written in terms of the same primitive
set, so a backward pass can itself be recorded and differentiated. That
double-backward path is what the critic's input-gradient-norm penalty
needs: the penalty is a function of an input gradient, and its parameter
gradient differentiates through that first reverse pass.

Custom primitives whose backward rule falls outside the differentiable set
(e.g. FFT-backed signal transforms) are flagged first-order-only and raise
SecondOrderUnsupportedOp if a create_graph pass reaches them.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class AutodiffError(RuntimeError):
    pass


class NotOnTape(AutodiffError):
    pass


class ShapeMismatch(AutodiffError):
    pass


class SecondOrderUnsupportedOp(AutodiffError):
    pass


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def grad_enabled(flag: bool):
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = flag
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-d array node. Leaf tensors with requires_grad=True are trainable."""

    __slots__ = ("data", "requires_grad", "_parents", "_vjp", "_op",
                 "_second_order_ok")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Optional[Callable] = None
        self._op = "leaf"
        self._second_order_ok = True

    # -- construction ------------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Tensor"], vjp, op: str,
                second_order_ok: bool = True) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        tracked = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = tracked
        out._parents = tuple(parents) if tracked else ()
        out._vjp = vjp if tracked else None
        out._op = op
        out._second_order_ok = second_order_ok
        return out

    # -- basic protocol ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.shape}, grad={self.requires_grad})"

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        return power(self, n)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


# ---------------------------------------------------------------------------
# shape plumbing


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = np.broadcast_to(x.data, shape)

    def vjp(g):
        return (_sum_to_shape(g, x.shape),)

    return Tensor._result(data, (x,), vjp, "broadcast")


def _sum_to_shape(g: Tensor, shape: tuple) -> Tensor:
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    if g.shape != shape:
        g = reshape(g, shape)
    return g


def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    return g if g.shape == shape else _sum_to_shape(g, shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting; gradients reduced back)


def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), vjp, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)

    return Tensor._result(a.data - b.data, (a, b), vjp, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return (_unbroadcast(mul(g, b), a.shape),
                _unbroadcast(mul(g, a), b.shape))

    return Tensor._result(a.data * b.data, (a, b), vjp, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        ga = div(g, b)
        return (_unbroadcast(ga, a.shape),
                _unbroadcast(neg(mul(ga, div(a, b))), b.shape))

    return Tensor._result(a.data / b.data, (a, b), vjp, "div")


def neg(a: Tensor) -> Tensor:
    def vjp(g):
        return (neg(g),)

    return Tensor._result(-a.data, (a,), vjp, "neg")


def power(a: Tensor, n: float) -> Tensor:
    n = float(n)

    def vjp(g):
        return (mul(g, mul(_as_tensor(np.asarray(n, dtype=a.dtype)),
                           power(a, n - 1.0))),)

    return Tensor._result(a.data**n, (a,), vjp, "pow")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def vjp(g):
        return (mul(g, out),)

    out = Tensor._result(out_data, (a,), vjp, "exp")
    return out


def log(a: Tensor) -> Tensor:
    def vjp(g):
        return (div(g, a),)

    return Tensor._result(np.log(a.data), (a,), vjp, "log")


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def vjp(g):
        half = np.asarray(0.5, dtype=a.dtype)
        return (div(mul(g, _as_tensor(half)), out),)

    out = Tensor._result(out_data, (a,), vjp, "sqrt")
    return out


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def vjp(g):
        one = _as_tensor(np.asarray(1.0, dtype=a.dtype))
        return (mul(g, sub(one, mul(out, out))),)

    out = Tensor._result(out_data, (a,), vjp, "tanh")
    return out


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(a.dtype)

    def vjp(g):
        # second derivative treated as zero a.e.: the mask is a constant
        return (mul(g, Tensor(mask)),)

    return Tensor._result(a.data * mask, (a,), vjp, "relu")


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        one = _as_tensor(np.asarray(1.0, dtype=a.dtype))
        return (mul(g, mul(out, sub(one, out))),)

    out = Tensor._result(out_data, (a,), vjp, "sigmoid")
    return out


def softplus(a: Tensor) -> Tensor:
    out_data = np.logaddexp(np.asarray(0.0, dtype=a.dtype), a.data)

    def vjp(g):
        return (mul(g, sigmoid(a)),)

    return Tensor._result(out_data, (a,), vjp, "softplus")


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        axes = tuple(range(a.ndim))
    elif isinstance(axis, int):
        axes = (axis % a.ndim,)
    else:
        axes = tuple(ax % a.ndim for ax in axis)
    out_data = np.sum(a.data, axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            kshape = tuple(
                1 if i in axes else n for i, n in enumerate(a.shape)
            )
            g = reshape(g, kshape)
        return (broadcast_to(g, a.shape),)

    return Tensor._result(out_data, (a,), vjp, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax % a.ndim] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims),
               _as_tensor(np.asarray(1.0 / count, dtype=a.dtype)))


# ---------------------------------------------------------------------------
# structure


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def vjp(g):
        return (reshape(g, a.shape),)

    return Tensor._result(a.data.reshape(shape), (a,), vjp, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (transpose(g, inv),)

    return Tensor._result(np.transpose(a.data, axes), (a,), vjp, "transpose")


def getitem(a: Tensor, key) -> Tensor:
    def vjp(g):
        return (scatter(g, a.shape, key),)

    return Tensor._result(a.data[key], (a,), vjp, "getitem")


def scatter(g: Tensor, shape, key) -> Tensor:
    """Embed g into zeros of `shape` at `key`; adjoint of getitem."""
    buf = np.zeros(shape, dtype=g.dtype)
    buf[key] = g.data

    def vjp(gg):
        return (getitem(gg, key),)

    return Tensor._result(buf, (g,), vjp, "scatter")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)

    def vjp(g):
        grads = []
        start = 0
        for n in sizes:
            key = tuple(
                slice(start, start + n) if i == axis else slice(None)
                for i in range(g.ndim)
            )
            grads.append(getitem(g, key))
            start += n
        return tuple(grads)

    return Tensor._result(out_data, tensors, vjp, "concat")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dims {a.shape} @ {b.shape}")

    def vjp(g):
        return matmul(g, transpose(b, (1, 0))), matmul(transpose(a, (1, 0)), g)

    return Tensor._result(a.data @ b.data, (a, b), vjp, "matmul")


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Stacked matmul: [G, M, K] @ [G, K, N] -> [G, M, N]."""
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeMismatch("bmm expects 3-D operands")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeMismatch(f"bmm dims {a.shape} @ {b.shape}")

    def vjp(g):
        return (bmm(g, transpose(b, (0, 2, 1))),
                bmm(transpose(a, (0, 2, 1)), g))

    return Tensor._result(a.data @ b.data, (a, b), vjp, "bmm")


# ---------------------------------------------------------------------------
# sliding windows (convolution support)


def unfold1d(x: Tensor, kernel: int, stride: int = 1, padding: int = 0) -> Tensor:
    """[B, C, L] -> [B, C, L_out, K] sliding windows over the last axis."""
    b, c, l = x.shape
    l_pad = l + 2 * padding
    l_out = (l_pad - kernel) // stride + 1
    data = x.data
    if padding:
        data = np.pad(data, ((0, 0), (0, 0), (padding, padding)))
    s0, s1, s2 = data.strides
    windows = np.lib.stride_tricks.as_strided(
        data, (b, c, l_out, kernel), (s0, s1, s2 * stride, s2)
    ).copy()

    def vjp(g):
        return (fold1d(g, l, stride=stride, padding=padding),)

    return Tensor._result(windows, (x,), vjp, "unfold1d")


def fold1d(g: Tensor, length: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of unfold1d: scatter-add windows back to [B, C, length]."""
    b, c, l_out, kernel = g.shape
    buf = np.zeros((b, c, length + 2 * padding), dtype=g.dtype)
    for k in range(kernel):
        buf[:, :, k:k + stride * l_out:stride] += g.data[:, :, :, k]
    if padding:
        buf = buf[:, :, padding:length + padding]

    def vjp(gg):
        return (unfold1d(gg, kernel, stride=stride, padding=padding),)

    return Tensor._result(buf, (g,), vjp, "fold1d")


# ---------------------------------------------------------------------------
# custom primitives


def custom_op(
    data: np.ndarray,
    parents: Sequence[Tensor],
    vjp: Callable,
    name: str,
    second_order_ok: bool = False,
) -> Tensor:
    """Register an externally computed primitive (e.g. FFT-backed)."""
    return Tensor._result(data, parents, vjp, name, second_order_ok)


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(output: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(
    output: Tensor,
    inputs: Sequence[Tensor],
    create_graph: bool = False,
    allow_unused: bool = False,
) -> list[Tensor]:
    """Gradients of a scalar output with respect to `inputs`.

    With create_graph=True the returned gradients are themselves nodes of
    the graph, so they can be differentiated again.
    """
    if output.size != 1:
        raise ShapeMismatch("grad expects a scalar output")
    wanted = {id(x) for x in inputs}
    grads: dict[int, Tensor] = {
        id(output): Tensor(np.ones_like(output.data))
    }
    order = _topo_order(output)
    with grad_enabled(create_graph):
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None:
                continue
            if id(node) not in wanted:
                del grads[id(node)]
            if node._vjp is None:
                continue
            if create_graph and not node._second_order_ok:
                raise SecondOrderUnsupportedOp(
                    f"op {node._op!r} does not support double backward"
                )
            parent_grads = node._vjp(g)
            for p, pg in zip(node._parents, parent_grads):
                if not p.requires_grad or pg is None:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)
    out = []
    for x in inputs:
        g = grads.get(id(x))
        if g is None:
            if not allow_unused:
                raise NotOnTape("input does not participate in the output")
            g = Tensor(np.zeros_like(x.data))
        out.append(g)
    return out
