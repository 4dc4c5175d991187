"""End-to-end segmentation network: stub backbone, class centers, scene-aware
class attention over patches, fusion head and upsampling.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from sacanet import ops
from sacanet.attention import AttentionProjections, aggregate, flatten_spatial, general_attention, project, uniform_init
from sacanet.class_center import (
    PatchGrid,
    PreClassifier,
    attention_inputs,
    global_center_map,
    local_class_centers,
    pre_classify,
    split_patches,
    stitch_patches,
)
from sacanet.context import ContextMLP, context_vector
from sacanet.errors import ConfigError, DimensionError
from sacanet.position import PositionBucket, grid_positions, scene_aware_affinity
from sacanet.tensor import Tensor

STRIDE = 4
_MASKED = -1e9


@dataclass
class SacaConfig:
    """Every hyperparameter of the network and of the toy trainer.

    ``patch_h``/``patch_w`` are measured on the quarter-resolution feature
    map. ``use_context`` and ``use_position`` switch the two attention
    refinements; when off, the corresponding weights are not allocated.
    """

    height: int = 32
    width: int = 32
    c_backbone: int = 16
    c_attn: int = 16
    k_classes: int = 4
    patch_h: int = 8
    patch_w: int = 8
    xi: int = 7
    epsilon: int = 16
    aux_loss_weight: float = 0.4
    seed: int = 0
    learning_rate: float = 0.01
    steps: int = 500
    weight_decay: float = 1e-4
    lr_power: float = 0.9
    use_context: bool = True
    use_position: bool = True
    context_relu: bool = True
    num_images: int = 16
    eval_images: int = 16
    noise: float = 0.35
    region_jitter: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        dims = ("height", "width", "c_backbone", "c_attn", "k_classes", "patch_h", "patch_w", "epsilon")
        for name in dims:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.xi < 0:
            raise ConfigError("xi must be >= 0")
        if self.height % STRIDE or self.width % STRIDE:
            raise ConfigError(f"image size {self.height}x{self.width} must be divisible by {STRIDE}")
        if self.use_context and self.c_attn % self.epsilon:
            raise ConfigError(f"epsilon={self.epsilon} must divide c_attn={self.c_attn}")
        if self.steps < 0 or self.learning_rate < 0 or self.weight_decay < 0 or self.aux_loss_weight < 0:
            raise ConfigError("steps, learning_rate, weight_decay and aux_loss_weight must be non-negative")

    @property
    def feature_size(self) -> tuple[int, int]:
        return self.height // STRIDE, self.width // STRIDE

    def grid(self) -> PatchGrid:
        fh, fw = self.feature_size
        return PatchGrid(fh, fw, self.patch_h, self.patch_w)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SacaConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "SacaConfig":
        return dataclasses.replace(self, **kw)

    def baseline(self) -> "SacaConfig":
        """Same network with both refinements off and one patch covering the map."""
        fh, fw = self.feature_size
        return self.replace(use_context=False, use_position=False, patch_h=fh, patch_w=fw)


@dataclass
class Backbone:
    """Two stride-2 3x3 convolutions with ReLU: ``[H, W, 3] -> [H/4, W/4, C_hat]``."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, c_out: int, rng: np.random.Generator, c_in: int = 3) -> "Backbone":
        def he(shape):
            bound = np.sqrt(6.0 / (shape[0] * shape[1] * shape[2]))
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        return cls(
            he((3, 3, c_in, c_out)),
            Tensor(np.zeros(c_out), requires_grad=True),
            he((3, 3, c_out, c_out)),
            Tensor(np.zeros(c_out), requires_grad=True),
        )

    def parameters(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class SacaModel:
    config: SacaConfig
    backbone: Backbone
    pre: PreClassifier
    proj: AttentionProjections
    head: Tensor
    context: Optional[ContextMLP] = None
    bucket: Optional[PositionBucket] = None

    @classmethod
    def init(cls, config: SacaConfig) -> "SacaModel":
        rng = np.random.default_rng(config.seed)
        cb, ca, k = config.c_backbone, config.c_attn, config.k_classes
        backbone = Backbone.init(cb, rng)
        pre = PreClassifier.init(cb, k, rng)
        proj = AttentionProjections.init(cb, ca, rng)
        head = uniform_init(rng, (ca + cb, k), ca + cb)
        # drawn last so toggling the refinements leaves every shared weight unchanged
        context = ContextMLP.init(ca, config.epsilon, rng, config.context_relu) if config.use_context else None
        bucket = PositionBucket.zeros(config.xi, ca) if config.use_position else None
        return cls(config, backbone, pre, proj, head, context, bucket)

    def groups(self) -> dict[str, dict[str, Tensor]]:
        out = {
            "backbone": self.backbone.parameters(),
            "pre_classifier": self.pre.parameters(),
            "projections": self.proj.parameters(),
        }
        if self.context is not None:
            out["context"] = self.context.parameters()
        if self.bucket is not None:
            out["position"] = self.bucket.parameters()
        out["head"] = {"w": self.head}
        return out

    def parameters(self) -> dict[str, Tensor]:
        return {f"{g}.{n}": t for g, ps in self.groups().items() for n, t in ps.items()}

    def count_parameters(self, exclude: tuple[str, ...] = ()) -> int:
        return sum(t.size for g, ps in self.groups().items() if g not in exclude for t in ps.values())

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.parameters().items()}

    def load_state(self, state: dict) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise DimensionError(f"parameter file lacks {sorted(missing)}")
        for name, t in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise DimensionError(f"{name}: stored shape {list(arr.shape)} != expected {list(t.shape)}")
            t.data = arr.copy()


def stub_backbone(image: Tensor, bb: Backbone) -> Tensor:
    if image.ndim != 3 or image.shape[0] % STRIDE or image.shape[1] % STRIDE:
        raise DimensionError(f"stub_backbone needs [H, W, C] with H, W divisible by {STRIDE}, got {list(image.shape)}")
    x = ops.relu(ops.conv2d(image, bb.w1, bb.b1, stride=2, padding=1))
    return ops.relu(ops.conv2d(x, bb.w2, bb.b2, stride=2, padding=1))


def class_attention(r: Tensor, d: Tensor, model: SacaModel, grid: Optional[PatchGrid] = None) -> Tensor:
    """Local-global scene-aware class attention; returns ``R_a [H, W, C]``.

    Queries are the pixel features of each patch, keys the patch's own
    scattered class centers and values the globally computed center map
    split by the same grid.
    """
    h_full, w_full = r.shape[:2]
    grid = grid or PatchGrid(h_full, w_full, model.config.patch_h, model.config.patch_w)
    mask = grid.valid_mask() if grid.padded else None

    s_g = split_patches(global_center_map(r, d), grid)
    r_l = split_patches(r, grid)
    d_l = split_patches(d, grid)
    s_l = local_class_centers(r_l, d_l, mask)
    xq, xk, xv = attention_inputs(r_l, s_l, s_g)

    q = flatten_spatial(project(xq, model.proj.wq))
    k = flatten_spatial(project(xk, model.proj.wk))
    v = flatten_spatial(project(xv, model.proj.wv))
    c = model.proj.c_out

    c_vec = None
    if model.context is not None:
        q_map = ops.reshape(q, (grid.n_patches, grid.h, grid.w, c))
        c_vec = context_vector(q_map, model.context, mask)
    pos = grid_positions(grid.h, grid.w)
    e = scene_aware_affinity(q, k, c_vec, model.bucket, pos, pos)
    if mask is not None:
        key_bias = np.where(mask.reshape(grid.n_patches, 1, -1), 0.0, _MASKED)
        e = ops.add(e, Tensor(key_bias))
    z = aggregate(ops.softmax(e, axis=-1), v, check=False)
    return stitch_patches(ops.reshape(z, (grid.n_patches, grid.h, grid.w, c)), grid)


def global_class_attention(r: Tensor, d: Tensor, proj: AttentionProjections) -> Tensor:
    """Reference: every pixel attends to the whole-image center map (keys = values)."""
    s = global_center_map(r, d)
    return general_attention(r, s, s, proj)


def saca_forward(image: Tensor, model: SacaModel) -> tuple[Tensor, Tensor]:
    """Returns ``(logits_main [H, W, K], logits_aux [H/4, W/4, K])``."""
    r = stub_backbone(image, model.backbone)
    d = pre_classify(r, model.pre)
    r_a = class_attention(r, d, model)
    fused = ops.matmul(ops.concat([r_a, r], axis=-1), model.head)
    return ops.bilinear_upsample(fused, STRIDE), d


def downsample_labels(labels: np.ndarray, factor: int = STRIDE) -> np.ndarray:
    """Nearest-neighbour label subsampling (top-left pixel of each block)."""
    return np.asarray(labels)[::factor, ::factor]


def loss(logits_main: Tensor, logits_aux: Tensor, labels: np.ndarray, aux_weight: float = 0.4) -> Tensor:
    """Main cross-entropy plus ``aux_weight`` times the pre-classifier's cross-entropy."""
    main = ops.cross_entropy(logits_main, labels)
    if aux_weight == 0:
        return main
    factor = logits_main.shape[0] // logits_aux.shape[0]
    aux = ops.cross_entropy(logits_aux, downsample_labels(labels, factor))
    return ops.add(main, ops.mul(aux, float(aux_weight)))


def predict(image: np.ndarray, model: SacaModel) -> np.ndarray:
    logits, _ = saca_forward(Tensor(image), model)
    return logits.data.argmax(axis=-1)
