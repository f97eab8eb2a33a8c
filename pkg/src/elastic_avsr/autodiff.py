"""Dense-tensor math with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float32 by default, float64 for gradient
verification). Every differentiable op records a backward closure; calling
``backward()`` on a scalar loss walks the graph in reverse topological order.
The op set is exactly what the rest of the system needs: no broadcasting
beyond bias-add and batched matmul, no views that alias gradients.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

# Multiply-accumulate counter for the measured-cost mode. Disabled unless a
# MacCounter context is active.
_mac_counter = None


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class MacCounter:
    """Counts multiply-accumulates executed by matmul while active."""

    def __init__(self):
        self.macs = 0

    def __enter__(self):
        global _mac_counter
        self._prev = _mac_counter
        _mac_counter = self
        return self

    def __exit__(self, *exc):
        global _mac_counter
        _mac_counter = self._prev
        return False


def _as_array(data, dtype):
    arr = np.asarray(data, dtype=dtype if dtype is not None else None)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    """A dense array plus optional gradient and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        """Reverse-mode pass from this tensor (scalar unless grad given)."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward() without explicit gradient requires a scalar, got shape {self.data.shape}"
                )
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar used throughout the model code.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul_scalar(other, -1.0) if isinstance(other, Tensor) else -other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)


def _node(data, parents, backward, requires_grad):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if requires_grad:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _needs_grad(*tensors):
    return any(t.requires_grad for t in tensors)


def _unbroadcast(g, shape):
    """Sum gradient g down to the given operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} vs {b.data.shape}")
    out_data = np.matmul(a.data, b.data)
    if _mac_counter is not None:
        batch = int(np.prod(out_data.shape[:-2])) if out_data.ndim > 2 else 1
        _mac_counter.macs += batch * out_data.shape[-2] * a.data.shape[-1] * out_data.shape[-1]

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape))

    return _node(out_data, (a, b), backward, _needs_grad(a, b))


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), backward, _needs_grad(a, b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), backward, _needs_grad(a, b))


def mul_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out_data = a.data * s

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return _node(out_data, (a,), backward, a.requires_grad)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return _node(out_data, (a,), backward, a.requires_grad)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out_data * out_data))

    return _node(out_data, (a,), backward, a.requires_grad)


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _node(out_data, (a,), backward, a.requires_grad)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out_data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inverse))

    return _node(out_data, (a,), backward, a.requires_grad)


def concat(tensors, axis) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _node(out_data, tensors, backward, _needs_grad(*tensors))


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = a.data[idx].copy()

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accumulate(full)

    return _node(out_data, (a,), backward, a.requires_grad)


def embedding(table: Tensor, ids) -> Tensor:
    """Row gather: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(
            f"embedding ids out of range [0, {table.data.shape[0]}): min={ids.min()}, max={ids.max()}"
        )
    out_data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            table._accumulate(gt)

    return _node(out_data, (table,), backward, table.requires_grad)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return _node(out_data, (a,), backward, a.requires_grad)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul_scalar(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(a: Tensor, axis=-1) -> Tensor:
    """Numerically stable softmax (max subtraction)."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out_data = ex / ex.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (g - dot))

    return _node(out_data, (a,), backward, a.requires_grad)


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer targets under row softmax.

    logits: [..., V]; targets: integer array broadcastable to logits' leading
    shape. Uses max-subtracted log-sum-exp for stability.
    """
    targets = np.asarray(targets)
    vocab = logits.data.shape[-1]
    if targets.shape != logits.data.shape[:-1]:
        raise ShapeError(
            f"targets shape {targets.shape} does not match logits leading shape {logits.data.shape[:-1]}"
        )
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise IndexError(
            f"target id out of range [0, {vocab}): min={targets.min()}, max={targets.max()}"
        )
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - lse
    picked = np.take_along_axis(log_probs, targets[..., None], axis=-1)[..., 0]
    count = max(targets.size, 1)
    out_data = np.asarray(-picked.sum() / count, dtype=logits.data.dtype)

    def backward(g):
        if logits.requires_grad:
            probs = np.exp(log_probs)
            np.subtract.at(probs, (*np.indices(targets.shape), targets), 1.0)
            logits._accumulate(probs * (g / count))

    return _node(out_data, (logits,), backward, logits.requires_grad)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps=1e-5) -> Tensor:
    """Normalize the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, xhat.shape[-1]).sum(axis=0))
        if x.requires_grad:
            n = x.data.shape[-1]
            dxhat = g * gain.data
            term = n * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            x._accumulate(inv / n * term)

    return _node(out_data, (x, gain, bias), backward, _needs_grad(x, gain, bias))
