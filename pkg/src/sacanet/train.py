"""Synthetic segmentation data and a plain SGD trainer with poly learning-rate decay."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from sacanet.errors import InputError
from sacanet.metrics import ConfusionMatrix, metrics
from sacanet.pipeline import SacaConfig, SacaModel, loss, predict, saca_forward
from sacanet.tensor import GradTape, Tensor

logger = logging.getLogger(__name__)

Sample = tuple[np.ndarray, np.ndarray]


def make_toy_dataset(
    n: int,
    height: int = 32,
    width: int = 32,
    k: int = 4,
    seed: int = 0,
    noise: float = 0.35,
    n_sites: tuple[int, int] = (4, 7),
    palette_seed: int = 1234,
    region_jitter: float = 0.0,
) -> list[Sample]:
    """Voronoi label maps with class-coloured pixels plus Gaussian noise.

    Each image draws a random number of sites; every site gets a class and
    the pixels nearest to it inherit that class. Pixel colour is the class's
    palette colour plus per-pixel noise of standard deviation ``noise``. The
    palette depends only on ``palette_seed`` so train and held-out splits
    share it.
    """
    palette = np.random.default_rng(palette_seed).uniform(-1.0, 1.0, size=(k, 3))
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    out = []
    for _ in range(n):
        m = int(rng.integers(n_sites[0], n_sites[1] + 1))
        sites = rng.uniform([0, 0], [height, width], size=(m, 2))
        classes = rng.integers(0, k, size=m)
        classes[: min(k, m)] = rng.permutation(k)[: min(k, m)]
        d2 = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
        region = d2.argmin(axis=-1)
        labels = classes[region].astype(np.uint8)
        offsets = region_jitter * rng.standard_normal((m, 3))
        image = palette[labels] + offsets[region] + noise * rng.standard_normal((height, width, 3))
        out.append((image, labels))
    return out


def toy_splits(config: SacaConfig) -> tuple[list[Sample], list[Sample]]:
    """Training and held-out sets derived from ``config.seed``."""
    kw = dict(
        height=config.height,
        width=config.width,
        k=config.k_classes,
        noise=config.noise,
        region_jitter=config.region_jitter,
    )
    train = make_toy_dataset(config.num_images, seed=10_000 + config.seed, **kw)
    held_out = make_toy_dataset(config.eval_images, seed=20_000 + config.seed, **kw)
    return train, held_out


def poly_lr(base: float, step: int, total: int, power: float = 0.9) -> float:
    return base * (1.0 - step / total) ** power


def sgd_step(params: Sequence[Tensor], lr: float, weight_decay: float) -> None:
    """``p <- p - lr * (grad + weight_decay * p)``; clears the gradients."""
    for p in params:
        g = p.grad if p.grad is not None else 0.0
        p.data = p.data - lr * (g + weight_decay * p.data)
        p.grad = None


def evaluate(model: SacaModel, dataset: Sequence[Sample]) -> dict:
    cm = ConfusionMatrix.empty(model.config.k_classes)
    for image, labels in dataset:
        cm.update(predict(image, model), labels)
    return metrics(cm)


@dataclass
class TrainingTrace:
    config: dict
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    order: list[int] = field(default_factory=list)
    train_metrics: Optional[dict] = None
    eval_metrics: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "losses": self.losses,
            "lrs": self.lrs,
            "order": self.order,
            "train_metrics": self.train_metrics,
            "eval_metrics": self.eval_metrics,
        }


def train_toy(
    config: SacaConfig,
    dataset: Sequence[Sample],
    eval_set: Optional[Sequence[Sample]] = None,
    model: Optional[SacaModel] = None,
) -> tuple[SacaModel, TrainingTrace]:
    """Batch-size-1 SGD over ``dataset`` for ``config.steps`` steps.

    Samples are visited in a fresh seeded permutation each epoch. Returns the
    trained model and the per-step trace with final metrics.
    """
    if len(dataset) == 0:
        raise InputError("training dataset is empty")
    model = model or SacaModel.init(config)
    params = list(model.parameters().values())
    rng = np.random.default_rng(config.seed + 1)
    trace = TrainingTrace(config.to_dict())
    order: list[int] = []
    for step in range(config.steps):
        if not order:
            order = list(rng.permutation(len(dataset)))
        idx = int(order.pop())
        image, labels = dataset[idx]
        lr = poly_lr(config.learning_rate, step, config.steps, config.lr_power)
        with GradTape() as tape:
            main, aux = saca_forward(Tensor(image), model)
            value = loss(main, aux, labels, config.aux_loss_weight)
        tape.backward(value)
        sgd_step(params, lr, config.weight_decay)
        trace.losses.append(value.item())
        trace.lrs.append(lr)
        trace.order.append(idx)
        if step % 100 == 0:
            logger.info("step %d loss %.4f lr %.5f", step, trace.losses[-1], lr)
    trace.train_metrics = evaluate(model, dataset)
    if eval_set is not None:
        trace.eval_metrics = evaluate(model, eval_set)
    return model, trace
