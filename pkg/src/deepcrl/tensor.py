"""Minimal reverse-mode autodiff over numpy arrays.

Every op records a closure on a tape (the graph of `Tensor` parents); calling
`backward()` on a scalar runs the closures in reverse topological order and
accumulates gradients into `.grad` buffers.  Parameter leaves can share their
grad buffer with a ParameterStore entry so a backward pass fills the store
directly.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array with an optional gradient and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, grad_buffer=None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = grad_buffer  # shared with a ParameterStore entry, or lazy
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def _ensure_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)

    def _accum(self, g):
        g = _unbroadcast(np.asarray(g), self.data.shape)
        if self.grad is None:
            # copy defensively: g may alias an upstream buffer
            self.grad = np.array(g)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar")
            grad = np.ones_like(self.data)
        topo, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self._accum(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- op helpers ---------------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(p for p in parents if p.requires_grad)
            out._backward = backward
        return out

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accum(g)
            if b.requires_grad:
                b._accum(g)
        return Tensor._make(self.data + other.data, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g, a=self):
            a._accum(-g)
        return Tensor._make(-self.data, (self,), bwd)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accum(g * b.data)
            if b.requires_grad:
                b._accum(g * a.data)
        return Tensor._make(self.data * other.data, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accum(g / b.data)
            if b.requires_grad:
                b._accum(-g * a.data / (b.data * b.data))
        return Tensor._make(self.data / other.data, (self, other), bwd)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only constant exponents are supported")
        def bwd(g, a=self, n=exponent):
            a._accum(g * n * a.data ** (n - 1))
        return Tensor._make(self.data ** exponent, (self,), bwd)

    def __matmul__(self, other):
        other = as_tensor(other)
        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accum(g @ b.data.T)
            if b.requires_grad:
                b._accum(a.data.T @ g)
        return Tensor._make(self.data @ other.data, (self, other), bwd)

    def __getitem__(self, idx):
        def bwd(g, a=self, idx=idx):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accum(full)
        return Tensor._make(self.data[idx], (self,), bwd)

    # -- reductions / reshapes ---------------------------------------------

    def sum(self, axis=None, keepdims=False):
        def bwd(g, a=self, axis=axis, keepdims=keepdims):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.data.shape))
        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), bwd)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        def bwd(g, a=self):
            a._accum(g.reshape(a.data.shape))
        return Tensor._make(self.data.reshape(*shape), (self,), bwd)

    @property
    def T(self):
        def bwd(g, a=self):
            a._accum(g.T)
        return Tensor._make(self.data.T, (self,), bwd)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise functions ---------------------------------------------------

def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)
    def bwd(g, a=x, y=out_data):
        a._accum(g * y)
    return Tensor._make(out_data, (x,), bwd)


def log(x: Tensor) -> Tensor:
    def bwd(g, a=x):
        a._accum(g / a.data)
    return Tensor._make(np.log(x.data), (x,), bwd)


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)
    def bwd(g, a=x, y=out_data):
        a._accum(g * 0.5 / y)
    return Tensor._make(out_data, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)
    def bwd(g, a=x, y=out_data):
        a._accum(g * (1.0 - y * y))
    return Tensor._make(out_data, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-x.data))
    def bwd(g, a=x, y=out_data):
        a._accum(g * y * (1.0 - y))
    return Tensor._make(out_data, (x,), bwd)


def softplus(x: Tensor) -> Tensor:
    # log(1 + e^x), stable for large |x|
    out_data = np.logaddexp(0.0, x.data)
    def bwd(g, a=x):
        a._accum(g / (1.0 + np.exp(-a.data)))
    return Tensor._make(out_data, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    def bwd(g, a=x, m=mask):
        a._accum(g * m)
    return Tensor._make(x.data * mask, (x,), bwd)


def swish(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    s = 1.0 / (1.0 + np.exp(-x.data))
    out_data = x.data * s
    def bwd(g, a=x, s=s, y=out_data):
        a._accum(g * (s + y * (1.0 - s)))
    return Tensor._make(out_data, (x,), bwd)


def dense_affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """x @ W + b as a single fused node."""
    def bwd(g, x=x, W=W, b=b):
        if x.requires_grad:
            x._accum(g @ W.data.T)
        if W.requires_grad:
            W._accum(x.data.T @ g)
        if b.requires_grad:
            b._accum(g)
    return Tensor._make(x.data @ W.data + b.data, (x, W, b), bwd)


def layer_norm_affine(x: Tensor, gain: Tensor, bias: Tensor, eps: float) -> Tensor:
    """Feature-axis layer norm with affine, fused forward and backward."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv  # normalized, pre-affine
    def bwd(g, x=x, gain=gain, bias=bias, y=y, inv=inv):
        if gain.requires_grad:
            gain._accum(g * y)
        if bias.requires_grad:
            bias._accum(g)
        if x.requires_grad:
            gg = g * gain.data
            dx = inv * (gg - gg.mean(axis=-1, keepdims=True)
                        - y * (gg * y).mean(axis=-1, keepdims=True))
            x._accum(dx)
    return Tensor._make(y * gain.data + bias.data, (x, gain, bias), bwd)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    def bwd(g, ts=tensors, splits=splits, axis=axis):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(piece)
    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis),
                        tuple(tensors), bwd)


def logsumexp(x: Tensor, axis=-1, keepdims=False) -> Tensor:
    """Max-subtraction-stabilized log-sum-exp along `axis`."""
    m = np.max(x.data, axis=axis, keepdims=True)  # constant shift, no grad
    shifted = x - Tensor(m)
    out = log(exp(shifted).sum(axis=axis, keepdims=True)) + Tensor(m)
    if not keepdims:
        out = out.reshape(tuple(n for i, n in enumerate(out.shape)
                                if i != (axis % out.data.ndim)))
    return out
