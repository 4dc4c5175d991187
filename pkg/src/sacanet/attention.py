"""General scaled dot-product attention over feature maps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from sacanet import ops
from sacanet.errors import DimensionError, InputError
from sacanet.tensor import Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


@dataclass
class AttentionProjections:
    """Bias-free per-pixel linear maps W^Q, W^K, W^V, each ``[c_in, c_out]``."""

    wq: Tensor
    wk: Tensor
    wv: Tensor

    def __post_init__(self):
        if not (self.wq.shape == self.wk.shape == self.wv.shape) or self.wq.ndim != 2:
            raise DimensionError(
                f"projection weights must share one [c_in, c_out] shape, got "
                f"{list(self.wq.shape)}, {list(self.wk.shape)}, {list(self.wv.shape)}"
            )

    @property
    def c_in(self) -> int:
        return self.wq.shape[0]

    @property
    def c_out(self) -> int:
        return self.wq.shape[1]

    @classmethod
    def init(cls, c_in: int, c_out: int, rng: np.random.Generator) -> "AttentionProjections":
        return cls(*(uniform_init(rng, (c_in, c_out), c_in) for _ in range(3)))

    def parameters(self) -> dict[str, Tensor]:
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv}


def project(x: Tensor, w: Tensor) -> Tensor:
    """Apply ``w`` to every pixel of ``x [..., c_in]``."""
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"project: input channels {x.shape[-1]} != weight rows {w.shape[0]}")
    return ops.matmul(x, w)


def affinity(q: Tensor, k: Tensor) -> Tensor:
    """Scaled dot products ``q k^T / sqrt(C)`` for ``q [..., Nq, C]`` and ``k [..., Nk, C]``."""
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"affinity: channel mismatch {list(q.shape)} vs {list(k.shape)}")
    c = q.shape[-1]
    if c < 1:
        raise DimensionError("affinity: channel dimension must be >= 1")
    return ops.mul(ops.matmul(q, ops.transpose(k)), 1.0 / math.sqrt(c))


def aggregate(alpha: Tensor, v: Tensor, check: bool = True) -> Tensor:
    """Rows of ``alpha`` weight the rows of ``v``."""
    if alpha.shape[-1] != v.shape[-2]:
        raise DimensionError(f"aggregate: weights {list(alpha.shape)} vs values {list(v.shape)}")
    if check and not np.allclose(alpha.data.sum(axis=-1), 1.0, rtol=0.0, atol=1e-6):
        raise InputError("aggregate: attention rows must sum to 1")
    return ops.matmul(alpha, v)


def flatten_spatial(x: Tensor) -> Tensor:
    """``[..., H, W, C]`` -> ``[..., H*W, C]``."""
    *lead, h, w, c = x.shape
    return ops.reshape(x, (*lead, h * w, c))


def general_attention(xq: Tensor, xk: Tensor, xv: Tensor, params: AttentionProjections) -> Tensor:
    """Plain attention of every query pixel over every key pixel; returns ``[H, W, C]``."""
    if not (xq.shape == xk.shape == xv.shape):
        raise DimensionError(
            f"general_attention: inputs {list(xq.shape)}, {list(xk.shape)}, {list(xv.shape)} differ"
        )
    *lead, h, w, _ = xq.shape
    q = flatten_spatial(project(xq, params.wq))
    k = flatten_spatial(project(xk, params.wk))
    v = flatten_spatial(project(xv, params.wv))
    alpha = ops.softmax(affinity(q, k), axis=-1)
    z = aggregate(alpha, v, check=False)
    return ops.reshape(z, (*lead, h, w, params.c_out))
