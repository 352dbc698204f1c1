"""Dense-network building blocks: parameter storage, layers, Adam.

All math is float32 by default; pass ``dtype=np.float64`` when building
parameters to run gradient checks at full precision.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ShapeError(ValueError):
    """Raised when operand dimensions disagree."""


class NonFiniteError(FloatingPointError):
    """Raised when a gradient or loss stops being finite."""


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)


class ParameterStore:
    """Ordered name -> (value, grad) map for one network's weights."""

    def __init__(self):
        self._entries: dict[str, Param] = {}

    def add(self, name: str, value: np.ndarray) -> Param:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Param(np.array(value))
        self._entries[name] = p
        return p

    def __contains__(self, name):
        return name in self._entries

    def __getitem__(self, name) -> Param:
        return self._entries[name]

    def __len__(self):
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def tensor(self, name: str) -> Tensor:
        """Leaf tensor whose backward accumulates into this entry's grad."""
        p = self._entries[name]
        return Tensor(p.value, requires_grad=True, grad_buffer=p.grad)

    def zero_grads(self):
        for p in self._entries.values():
            p.grad.fill(0.0)

    def num_scalars(self) -> int:
        return sum(p.value.size for p in self._entries.values())

    def grad_global_norm(self) -> float:
        sq = 0.0
        for p in self._entries.values():
            sq += float(np.sum(p.grad.astype(np.float64) ** 2))
        return float(np.sqrt(sq))

    def clip_grad_global_norm(self, max_norm: float) -> float:
        """Scale all grads so their joint L2 norm is at most max_norm."""
        norm = self.grad_global_norm()
        if norm > max_norm:
            scale = max_norm / norm
            for p in self._entries.values():
                p.grad *= scale
        return norm

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self._entries.items()}

    def load_values(self, values: dict[str, np.ndarray]):
        for k, p in self._entries.items():
            if k not in values:
                raise KeyError(f"missing parameter entry: {k}")
            v = values[k]
            if v.shape != p.value.shape:
                raise ShapeError(
                    f"shape mismatch for entry {k}: {v.shape} vs {p.value.shape}")
            p.value[...] = v


class AdamState:
    """First/second moment buffers plus step counter for one ParameterStore."""

    def __init__(self, store: ParameterStore, lr=3e-4, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in store.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in store.items()}


def adam_step(store: ParameterStore, state: AdamState):
    """One Adam update with bias correction; zeroes grads afterwards."""
    for name, p in store.items():
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"non-finite gradient in entry {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in store.items():
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        g.fill(0.0)


# -- layers ------------------------------------------------------------------

def swish(x: Tensor) -> Tensor:
    """Elementwise x * sigmoid(x)."""
    return T.swish(x)


def dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """x @ W + b with explicit shape checking."""
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(
            f"dense: input dim {x.shape[-1]} does not match weight rows {W.shape[0]}")
    if W.shape[1] != b.shape[-1]:
        raise ShapeError(
            f"dense: weight cols {W.shape[1]} do not match bias dim {b.shape[-1]}")
    return T.dense_affine(x, W, b)


def layer_norm(h: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the feature (last) axis, then affine."""
    if eps <= 0:
        # eps == 0 is allowed only for exact-value tests; guard stays for < 0
        if eps < 0:
            raise ValueError("layer_norm eps must be >= 0")
    return T.layer_norm_affine(h, gain, bias, eps)


def residual_block(h: Tensor, store: ParameterStore, prefix: str,
                   ln_eps: float = 1e-6) -> Tensor:
    """h + F(h), F = four repetitions of dense -> layer norm -> swish."""
    z = h
    for u in range(4):
        z = dense(z, store.tensor(f"{prefix}.u{u}.W"), store.tensor(f"{prefix}.u{u}.b"))
        z = layer_norm(z, store.tensor(f"{prefix}.u{u}.ln_g"),
                       store.tensor(f"{prefix}.u{u}.ln_b"), ln_eps)
        z = swish(z)
    return h + z
