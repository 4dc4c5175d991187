"""Channel gate that contextualises queries with pooled scene statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from sacanet import ops
from sacanet.attention import uniform_init
from sacanet.errors import ConfigError, DimensionError
from sacanet.tensor import Tensor


@dataclass
class ContextMLP:
    """Shared bottleneck ``C -> C/eps -> C`` applied to the avg- and max-pooled queries.

    ``hidden_relu`` toggles the activation between the two layers.
    """

    w0: Tensor
    w1: Tensor
    epsilon: int
    hidden_relu: bool = True

    def __post_init__(self):
        c, r = self.w0.shape
        if self.w1.shape != (r, c):
            raise DimensionError(f"ContextMLP: w0 {list(self.w0.shape)} and w1 {list(self.w1.shape)} disagree")
        if self.epsilon < 1 or c % self.epsilon or c // self.epsilon != r:
            raise ConfigError(f"ContextMLP: reduction ratio {self.epsilon} inconsistent with widths {c}->{r}")

    @property
    def channels(self) -> int:
        return self.w0.shape[0]

    @classmethod
    def init(cls, channels: int, epsilon: int, rng: np.random.Generator, hidden_relu: bool = True) -> "ContextMLP":
        if epsilon < 1 or channels % epsilon:
            raise ConfigError(f"reduction ratio {epsilon} must divide channel count {channels}")
        r = channels // epsilon
        return cls(uniform_init(rng, (channels, r), channels), uniform_init(rng, (r, channels), r), epsilon, hidden_relu)

    @classmethod
    def zeros(cls, channels: int, epsilon: int, hidden_relu: bool = True) -> "ContextMLP":
        r = channels // epsilon
        return cls(
            Tensor(np.zeros((channels, r)), requires_grad=True),
            Tensor(np.zeros((r, channels)), requires_grad=True),
            epsilon,
            hidden_relu,
        )

    def parameters(self) -> dict[str, Tensor]:
        return {"w0": self.w0, "w1": self.w1}

    def __call__(self, pooled: Tensor) -> Tensor:
        hidden = ops.matmul(pooled, self.w0)
        if self.hidden_relu:
            hidden = ops.relu(hidden)
        return ops.matmul(hidden, self.w1)


def context_vector(q_map: Tensor, mlp: ContextMLP, mask: Optional[np.ndarray] = None) -> Tensor:
    """Diagonal of the context matrix for ``q_map [..., H, W, C]``; entries lie in (0, 1)."""
    if q_map.shape[-1] != mlp.channels:
        raise DimensionError(f"context_vector: map has {q_map.shape[-1]} channels, MLP expects {mlp.channels}")
    avg = ops.pool_spatial(q_map, "avg", mask)
    mx = ops.pool_spatial(q_map, "max", mask)
    # keep a row axis so the MLP sees [..., 1, C]
    avg = ops.reshape(avg, (*avg.shape[:-1], 1, avg.shape[-1]))
    mx = ops.reshape(mx, avg.shape)
    c = ops.sigmoid(ops.add(mlp(avg), mlp(mx)))
    return ops.reshape(c, (*c.shape[:-2], c.shape[-1]))


def gate_queries(q: Tensor, c_vec: Tensor) -> Tensor:
    """``q @ diag(c_vec)`` for ``q [..., N, C]`` and ``c_vec [..., C]``, done as a channel scale."""
    if q.shape[-1] != c_vec.shape[-1]:
        raise DimensionError(f"gate_queries: {list(q.shape)} vs gate {list(c_vec.shape)}")
    gate = ops.reshape(c_vec, (*c_vec.shape[:-1], 1, c_vec.shape[-1]))
    return ops.mul(q, gate)
