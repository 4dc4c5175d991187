"""Two-dimensional relative-position bias from a clamped bucket of vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from sacanet import ops
from sacanet.context import gate_queries
from sacanet.errors import DimensionError
from sacanet.tensor import Tensor

Position = tuple[int, int]


@dataclass
class PositionBucket:
    """Trainable ``[2*xi+1, 2*xi+1, C]`` table indexed by clamped (dx, dy) offsets."""

    p: Tensor
    xi: int

    def __post_init__(self):
        side = 2 * self.xi + 1
        if self.xi < 0 or self.p.ndim != 3 or self.p.shape[:2] != (side, side):
            raise DimensionError(f"bucket for xi={self.xi} must be [{side}, {side}, C], got {list(self.p.shape)}")

    @property
    def channels(self) -> int:
        return self.p.shape[2]

    @classmethod
    def zeros(cls, xi: int, channels: int) -> "PositionBucket":
        side = 2 * xi + 1
        return cls(Tensor(np.zeros((side, side, channels)), requires_grad=True), xi)

    def parameters(self) -> dict[str, Tensor]:
        return {"p": self.p}


def clamp_index(d, xi: int):
    """Saturate an offset (or array of offsets) into ``[-xi, xi]``."""
    if isinstance(d, np.ndarray):
        return np.clip(d, -xi, xi)
    return max(-xi, min(int(d), xi))


def grid_positions(h: int, w: int) -> list[Position]:
    """``(x, y)`` of each pixel of an ``h x w`` grid in row-major order; x is the column."""
    return [(x, y) for y in range(h) for x in range(w)]


def relative_indices(qpos: Sequence[Position], kpos: Sequence[Position], xi: int) -> tuple[np.ndarray, np.ndarray]:
    """Bucket row/column index arrays ``[Nq, Nk]`` for every query/key pair."""
    qp = np.asarray(qpos, dtype=np.int64).reshape(-1, 2)
    kp = np.asarray(kpos, dtype=np.int64).reshape(-1, 2)
    ix = clamp_index(qp[:, None, 0] - kp[None, :, 0], xi) + xi
    iy = clamp_index(qp[:, None, 1] - kp[None, :, 1], xi) + xi
    return ix, iy


def lookup(bucket: PositionBucket, pos_i: Position, pos_j: Position) -> Tensor:
    ix = clamp_index(pos_i[0] - pos_j[0], bucket.xi) + bucket.xi
    iy = clamp_index(pos_i[1] - pos_j[1], bucket.xi) + bucket.xi
    return ops.take(bucket.p, (ix, iy))


def position_bias(
    bucket: PositionBucket,
    q: Tensor,
    qpos: Sequence[Position],
    kpos: Sequence[Position],
) -> Tensor:
    """Unscaled ``q_i . r_ij`` for ``q [..., Nq, C]``; returns ``[..., Nq, Nk]``.

    The pair table ``r [Nq, Nk, C]`` is gathered once and contracted with the
    queries as a batched matmul over the query index.
    """
    *lead, nq, c = q.shape
    if len(qpos) != nq:
        raise DimensionError(f"position_bias: {len(qpos)} query positions for {nq} queries")
    if c != bucket.channels:
        raise DimensionError(f"position_bias: query channels {c} vs bucket channels {bucket.channels}")
    ix, iy = relative_indices(qpos, kpos, bucket.xi)
    nk = ix.shape[1]
    r = ops.take(bucket.p, (ix, iy))  # [Nq, Nk, C]
    batch = int(np.prod(lead)) if lead else 1
    qb = ops.permute(ops.reshape(q, (batch, nq, c)), (1, 0, 2))  # [Nq, B, C]
    bias = ops.matmul(qb, ops.permute(r, (0, 2, 1)))  # [Nq, B, Nk]
    bias = ops.permute(bias, (1, 0, 2))
    return ops.reshape(bias, (*lead, nq, nk))


def scene_aware_affinity(
    q: Tensor,
    k: Tensor,
    c_vec: Optional[Tensor],
    bucket: Optional[PositionBucket],
    qpos: Sequence[Position],
    kpos: Sequence[Position],
) -> Tensor:
    """``((q diag(c)) k^T + q r^T) / sqrt(C)``; a ``None`` gate or bucket drops that term."""
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"scene_aware_affinity: channel mismatch {list(q.shape)} vs {list(k.shape)}")
    gated = q if c_vec is None else gate_queries(q, c_vec)
    logits = ops.matmul(gated, ops.transpose(k))
    if bucket is not None:
        logits = ops.add(logits, position_bias(bucket, q, qpos, kpos))
    return ops.mul(logits, 1.0 / math.sqrt(q.shape[-1]))
