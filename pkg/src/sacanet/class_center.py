"""Class center generation and the local/global patch inputs to class attention.

A pre-classifier turns pixel features into per-class logits. Each class
center is a spatial-softmax-weighted average of pixel features; the centers
are then scattered back onto the grid by each pixel's arg-max class, giving
a center map with the same layout as the features. Local centers repeat the
same computation inside every patch of a :class:`PatchGrid`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from sacanet import ops
from sacanet.attention import uniform_init
from sacanet.errors import DimensionError
from sacanet.tensor import Tensor

# additive logit for padded pixels; exp() of it underflows to exactly 0
_MASKED = -1e9


@dataclass
class PreClassifier:
    """Two bias-free 1x1 convolutions ``C_hat -> C_hat -> K`` with a ReLU between."""

    conv1: Tensor
    conv2: Tensor

    def __post_init__(self):
        c = self.conv1.shape[0]
        if self.conv1.shape != (c, c) or self.conv2.ndim != 2 or self.conv2.shape[0] != c:
            raise DimensionError(
                f"PreClassifier: conv1 {list(self.conv1.shape)} / conv2 {list(self.conv2.shape)} inconsistent"
            )

    @property
    def k_classes(self) -> int:
        return self.conv2.shape[1]

    @classmethod
    def init(cls, channels: int, k_classes: int, rng: np.random.Generator) -> "PreClassifier":
        return cls(uniform_init(rng, (channels, channels), channels), uniform_init(rng, (channels, k_classes), channels))

    def parameters(self) -> dict[str, Tensor]:
        return {"conv1": self.conv1, "conv2": self.conv2}


@dataclass
class ClassCenters:
    centers: Tensor  # [..., K, C_hat]
    weights_used: np.ndarray  # [..., K], total assignment mass per class


@dataclass(frozen=True)
class PatchGrid:
    height: int
    width: int
    h: int
    w: int

    def __post_init__(self):
        if min(self.height, self.width, self.h, self.w) < 1:
            raise DimensionError(f"invalid patch grid {self}")

    @property
    def pad_h(self) -> int:
        return -self.height % self.h

    @property
    def pad_w(self) -> int:
        return -self.width % self.w

    @property
    def n_h(self) -> int:
        return (self.height + self.pad_h) // self.h

    @property
    def n_w(self) -> int:
        return (self.width + self.pad_w) // self.w

    @property
    def n_patches(self) -> int:
        return self.n_h * self.n_w

    @property
    def padded(self) -> bool:
        return bool(self.pad_h or self.pad_w)

    def valid_mask(self) -> np.ndarray:
        """Boolean ``[n_patches, h, w]``; False marks padding."""
        m = np.zeros((self.height + self.pad_h, self.width + self.pad_w, 1), dtype=bool)
        m[: self.height, : self.width] = True
        tiles = ops.split_tiles(Tensor(m), self.h, self.w).data
        return tiles[..., 0] > 0.5


def pre_classify(r: Tensor, pc: PreClassifier) -> Tensor:
    """Unnormalised per-pixel class logits ``[..., H, W, K]``."""
    if r.shape[-1] != pc.conv1.shape[0]:
        raise DimensionError(f"pre_classify: features have {r.shape[-1]} channels, expected {pc.conv1.shape[0]}")
    return ops.matmul(ops.relu(ops.matmul(r, pc.conv1)), pc.conv2)


def class_centers(r: Tensor, logits: Tensor, mask: Optional[np.ndarray] = None) -> ClassCenters:
    """Centers from a per-class softmax over pixels of ``logits``.

    ``r`` is ``[..., H, W, C_hat]``, ``logits`` ``[..., H, W, K]``; ``mask``
    (``[..., H, W]``) removes padded pixels from the softmax.
    """
    if r.shape[:-1] != logits.shape[:-1]:
        raise DimensionError(f"class_centers: features {list(r.shape)} vs logits {list(logits.shape)}")
    *lead, h, w, c = r.shape
    k = logits.shape[-1]
    flat_logits = ops.reshape(logits, (*lead, h * w, k))
    scores = ops.transpose(flat_logits)  # [..., K, N]
    if mask is not None:
        bias = np.where(np.asarray(mask, dtype=bool).reshape(*lead, 1, h * w), 0.0, _MASKED)
        scores = ops.add(scores, Tensor(bias))
    assign = ops.softmax(scores, axis=-1)
    centers = ops.matmul(assign, ops.reshape(r, (*lead, h * w, c)))
    return ClassCenters(centers, assign.data.sum(axis=-1))


def scatter_centers(centers: ClassCenters, logits: Tensor) -> Tensor:
    """Give every pixel the center of its arg-max class (ties -> lowest class index)."""
    cen = centers.centers
    *lead, h, w, k = logits.shape
    if tuple(cen.shape[:-2]) != tuple(lead) or cen.shape[-2] != k:
        raise DimensionError(f"scatter_centers: centers {list(cen.shape)} vs logits {list(logits.shape)}")
    labels = logits.data.argmax(axis=-1)  # [..., H, W]
    if lead:
        batch = np.indices(labels.shape)[: len(lead)]
        index = (*batch, labels)
    else:
        index = (labels,)
    return ops.take(cen, index)


def split_patches(x: Tensor, grid: PatchGrid) -> Tensor:
    """``[H, W, C]`` -> ``[n_patches, h, w, C]``, zero-padding bottom/right when needed."""
    if x.shape[:2] != (grid.height, grid.width):
        raise DimensionError(f"split_patches: map {list(x.shape)} does not match grid {grid.height}x{grid.width}")
    return ops.split_tiles(ops.pad2d(x, grid.pad_h, grid.pad_w), grid.h, grid.w)


def stitch_patches(patches: Tensor, grid: PatchGrid) -> Tensor:
    """Inverse of :func:`split_patches`, cropping away the padding."""
    return ops.crop2d(ops.stitch_tiles(patches, grid.n_h, grid.n_w), grid.height, grid.width)


def global_center_map(r: Tensor, logits: Tensor) -> Tensor:
    """Whole-image centers scattered back onto ``[H, W, C_hat]``."""
    return scatter_centers(class_centers(r, logits), logits)


def local_class_centers(r_l: Tensor, d_l: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Per-patch scattered center maps ``[n_patches, h, w, C_hat]``.

    Each patch is treated independently: its own spatial softmax, its own
    centers, its own arg-max scatter.
    """
    if r_l.shape[:-1] != d_l.shape[:-1]:
        raise DimensionError(f"local_class_centers: patch stacks {list(r_l.shape)} vs {list(d_l.shape)}")
    return scatter_centers(class_centers(r_l, d_l, mask), d_l)


def attention_inputs(r_l: Tensor, s_l: Tensor, s_g: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Queries are pixels, keys local centers, values global centers."""
    if not (r_l.shape[:-1] == s_l.shape[:-1] == s_g.shape[:-1]):
        raise DimensionError(
            f"attention_inputs: {list(r_l.shape)}, {list(s_l.shape)}, {list(s_g.shape)} do not share a grid"
        )
    if not (r_l.shape[-1] == s_l.shape[-1] == s_g.shape[-1]):
        raise DimensionError("attention_inputs: channel counts differ")
    return r_l, s_l, s_g
