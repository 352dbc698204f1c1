"""Residual actor/critic network construction and parameter counting.

A network is: input projection dense (input_dim -> width), then depth/4
residual blocks of four dense+LN+swish units each, then an output head
(width -> output_dim).  "Depth" counts only the dense layers inside residual
blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import ParameterStore, Tensor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    width: int
    depth: int
    output_dim: int
    use_input_projection: bool = True

    def validate(self):
        if self.depth <= 0 or self.depth % 4 != 0:
            raise ConfigError(
                f"depth must be a positive multiple of 4 (block size), got {self.depth}")
        if self.width < 1 or self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError("width and dims must be >= 1")

    @property
    def num_blocks(self) -> int:
        return self.depth // 4


class BuiltNetwork:
    """A NetworkSpec bound to an initialized ParameterStore."""

    def __init__(self, spec: NetworkSpec, params: ParameterStore, ln_eps: float = 1e-6):
        self.spec = spec
        self.params = params
        self.ln_eps = ln_eps

    def forward(self, x, grad: bool = True, residuals: list = None) -> Tensor:
        """Map (batch, input_dim) -> (batch, output_dim).

        With grad=False no tape is recorded (cheap evaluation path).
        """
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x))
        if x.shape[-1] != self.spec.input_dim:
            raise nn.ShapeError(
                f"input dim {x.shape[-1]} != spec input_dim {self.spec.input_dim}")
        p = self.params.tensor if grad else (lambda n: Tensor(self.params[n].value))
        h = nn.dense(x, p("in_proj.W"), p("in_proj.b"))
        for i in range(self.spec.num_blocks):
            prefix = f"block{i}"
            z = h
            for u in range(4):
                z = nn.dense(z, p(f"{prefix}.u{u}.W"), p(f"{prefix}.u{u}.b"))
                z = nn.layer_norm(z, p(f"{prefix}.u{u}.ln_g"), p(f"{prefix}.u{u}.ln_b"),
                                  self.ln_eps)
                z = nn.swish(z)
            if residuals is not None:
                residuals.append(z.data)
            h = h + z
        return nn.dense(h, p("head.W"), p("head.b"))

    def forward_with_residuals(self, x):
        """Evaluation forward that also returns each block's branch output."""
        residuals = []
        out = self.forward(x, grad=False, residuals=residuals)
        return out, residuals


def build_network(spec: NetworkSpec, seed: int, dtype=np.float32) -> BuiltNetwork:
    """Deterministic fan-in-scaled initialization from `seed`."""
    spec.validate()
    rng = np.random.default_rng(seed)
    store = ParameterStore()

    def init_dense(name, fan_in, fan_out):
        std = 1.0 / np.sqrt(fan_in)
        store.add(f"{name}.W", rng.normal(0.0, std, size=(fan_in, fan_out)).astype(dtype))
        store.add(f"{name}.b", np.zeros(fan_out, dtype=dtype))

    init_dense("in_proj", spec.input_dim, spec.width)
    for i in range(spec.num_blocks):
        for u in range(4):
            name = f"block{i}.u{u}"
            init_dense(name, spec.width, spec.width)
            store.add(f"{name}.ln_g", np.ones(spec.width, dtype=dtype))
            store.add(f"{name}.ln_b", np.zeros(spec.width, dtype=dtype))
    init_dense("head", spec.width, spec.output_dim)
    return BuiltNetwork(spec, store)


def param_count(spec: NetworkSpec) -> int:
    """Exact scalar parameter count for build_network(spec)."""
    spec.validate()
    w = spec.width
    n = spec.input_dim * w + w              # input projection
    n += spec.depth * (w * w + w + 2 * w)   # block dense layers + LN affines
    n += w * spec.output_dim + spec.output_dim
    return n
