"""Central finite-difference checks of tape gradients.

Each suite builds small random instances (inputs uniform in [-1, 1]),
reduces the operation's output to a scalar with a fixed random weighting,
and compares the tape gradient of every input against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from sacanet import ops
from sacanet.attention import AttentionProjections, affinity, aggregate, general_attention, project
from sacanet.class_center import (
    PatchGrid,
    PreClassifier,
    class_centers,
    local_class_centers,
    pre_classify,
    scatter_centers,
    split_patches,
    stitch_patches,
)
from sacanet.context import ContextMLP, context_vector, gate_queries
from sacanet.pipeline import SacaConfig, SacaModel, loss, saca_forward, stub_backbone
from sacanet.position import PositionBucket, grid_positions, position_bias, scene_aware_affinity
from sacanet.tensor import GradTape, Tensor

PRIMITIVE_TOL = 1e-5
PIPELINE_TOL = 1e-4
STEP = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom < 1e-300:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def numerical_gradient(f: Callable[[], Tensor], t: Tensor, step: float = STEP) -> np.ndarray:
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f().item()
        flat[i] = orig - step
        fm = f().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def check_gradients(f: Callable[[], Tensor], inputs: dict[str, Tensor], step: float = STEP) -> dict[str, float]:
    """Relative error of the tape gradient against central differences, per input."""
    for t in inputs.values():
        t.requires_grad = True
        t.grad = None
    with GradTape() as tape:
        out = f()
    tape.backward(out)
    errors = {}
    for name, t in inputs.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        errors[name] = relative_error(analytic, numerical_gradient(f, t, step))
    return errors


def weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, Tensor(weights)))


@dataclass
class GradResult:
    suite: str
    case: str
    seed: int
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tol


def _u(rng, *shape) -> Tensor:
    return Tensor(rng.uniform(-1.0, 1.0, size=shape))


def _case(rng, build: Callable[[dict], Tensor], inputs: dict[str, Tensor]) -> dict[str, float]:
    probe = build(inputs)
    weights = rng.uniform(-1.0, 1.0, size=probe.shape)
    return check_gradients(lambda: weighted_sum(build(inputs), weights), inputs)


def _primitive_cases(rng) -> dict[str, tuple]:
    labels = rng.integers(0, 3, size=(2, 3))
    labels[0, 0] = 255
    pool_in = rng.uniform(-1, 1, size=(2, 3, 2, 4))
    return {
        "add": (lambda t: ops.add(t["a"], t["b"]), {"a": _u(rng, 3, 4), "b": _u(rng, 1, 4)}),
        "sub": (lambda t: ops.sub(t["a"], t["b"]), {"a": _u(rng, 3, 4), "b": _u(rng, 3, 4)}),
        "mul": (lambda t: ops.mul(t["a"], t["b"]), {"a": _u(rng, 3, 4), "b": _u(rng, 3, 1)}),
        "div": (lambda t: ops.div(t["a"], ops.add(ops.mul(t["b"], t["b"]), 1.0)), {"a": _u(rng, 3), "b": _u(rng, 3)}),
        "scale": (lambda t: ops.mul(t["a"], 2.5), {"a": _u(rng, 2, 3)}),
        "matmul": (lambda t: ops.matmul(t["a"], t["b"]), {"a": _u(rng, 3, 4), "b": _u(rng, 4, 2)}),
        "matmul_batched": (lambda t: ops.matmul(t["a"], t["b"]), {"a": _u(rng, 2, 3, 4), "b": _u(rng, 4, 2)}),
        "softmax": (lambda t: ops.softmax(t["x"], axis=-1), {"x": _u(rng, 3, 5)}),
        "softmax_axis0": (lambda t: ops.softmax(t["x"], axis=0), {"x": _u(rng, 4, 2)}),
        "log_softmax": (lambda t: ops.log_softmax(t["x"], axis=-1), {"x": _u(rng, 3, 4)}),
        "sigmoid": (lambda t: ops.sigmoid(t["x"]), {"x": _u(rng, 5)}),
        "relu": (lambda t: ops.relu(t["x"]), {"x": _u(rng, 6)}),
        "exp_log": (lambda t: ops.log(ops.exp(t["x"])), {"x": _u(rng, 4)}),
        "sum_axis": (lambda t: ops.sum(t["x"], axis=1), {"x": _u(rng, 3, 4)}),
        "mean": (lambda t: ops.mean(t["x"]), {"x": _u(rng, 3, 4)}),
        "pool_avg": (lambda t: ops.pool_spatial(t["x"], "avg"), {"x": Tensor(pool_in[0])}),
        "pool_max": (lambda t: ops.pool_spatial(t["x"], "max"), {"x": Tensor(pool_in[1])}),
        "pool_avg_masked": (
            lambda t: ops.pool_spatial(t["x"], "avg", np.array([[True, False], [True, True], [False, True]])),
            {"x": _u(rng, 3, 2, 4)},
        ),
        "reshape": (lambda t: ops.reshape(t["x"], (4, 3)), {"x": _u(rng, 2, 6)}),
        "permute": (lambda t: ops.permute(t["x"], (2, 0, 1)), {"x": _u(rng, 2, 3, 4)}),
        "concat": (lambda t: ops.concat([t["a"], t["b"]], axis=-1), {"a": _u(rng, 2, 3), "b": _u(rng, 2, 2)}),
        "take": (lambda t: ops.take(t["x"], (np.array([0, 2, 2, 1]),)), {"x": _u(rng, 3, 2)}),
        "pad_crop": (lambda t: ops.crop2d(ops.pad2d(t["x"], 1, 2), 2, 3), {"x": _u(rng, 2, 3, 2)}),
        "upsample": (lambda t: ops.bilinear_upsample(t["x"], 4), {"x": _u(rng, 2, 3, 2)}),
        "conv2d": (
            lambda t: ops.conv2d(t["x"], t["w"], t["b"], stride=2, padding=1),
            {"x": _u(rng, 5, 4, 2), "w": _u(rng, 3, 3, 2, 3), "b": _u(rng, 3)},
        ),
        "cross_entropy": (lambda t: ops.cross_entropy(t["x"], labels), {"x": _u(rng, 2, 3, 3)}),
        "split_stitch": (
            lambda t: ops.stitch_tiles(ops.mul(ops.split_tiles(t["x"], 2, 2), 3.0), 2, 1),
            {"x": _u(rng, 4, 2, 3)},
        ),
    }


def _attention_cases(rng) -> dict[str, tuple]:
    def ga(t):
        return general_attention(t["xq"], t["xk"], t["xv"], AttentionProjections(t["wq"], t["wk"], t["wv"]))

    return {
        "project": (lambda t: project(t["x"], t["w"]), {"x": _u(rng, 2, 2, 3), "w": _u(rng, 3, 2)}),
        "affinity": (lambda t: affinity(t["q"], t["k"]), {"q": _u(rng, 3, 4), "k": _u(rng, 5, 4)}),
        "aggregate": (
            lambda t: aggregate(ops.softmax(t["e"], axis=-1), t["v"]),
            {"e": _u(rng, 3, 4), "v": _u(rng, 4, 2)},
        ),
        "general_attention": (
            ga,
            {
                "xq": _u(rng, 2, 2, 3),
                "xk": _u(rng, 2, 2, 3),
                "xv": _u(rng, 2, 2, 3),
                "wq": _u(rng, 3, 2),
                "wk": _u(rng, 3, 2),
                "wv": _u(rng, 3, 2),
            },
        ),
    }


def _context_cases(rng) -> dict[str, tuple]:
    def gated(t, relu=True):
        mlp = ContextMLP(t["w0"], t["w1"], 2, hidden_relu=relu)
        c = context_vector(t["q_map"], mlp)
        q = ops.reshape(t["q_map"], (-1, 4))
        return gate_queries(q, c)

    inputs = lambda: {"q_map": _u(rng, 3, 3, 4), "w0": _u(rng, 4, 2), "w1": _u(rng, 2, 4)}  # noqa: E731
    return {
        "context_vector": (
            lambda t: context_vector(t["q_map"], ContextMLP(t["w0"], t["w1"], 2)),
            inputs(),
        ),
        "gate_queries": (lambda t: gate_queries(t["q"], t["c"]), {"q": _u(rng, 4, 3), "c": _u(rng, 3)}),
        "context_then_gate": (gated, inputs()),
        "context_then_gate_linear": (lambda t: gated(t, relu=False), inputs()),
    }


def _position_cases(rng) -> dict[str, tuple]:
    pos = grid_positions(3, 3)
    return {
        "position_bias": (
            lambda t: position_bias(PositionBucket(t["p"], 1), t["q"], pos, pos),
            {"p": _u(rng, 3, 3, 2), "q": _u(rng, 9, 2)},
        ),
        "position_bias_batched": (
            lambda t: position_bias(PositionBucket(t["p"], 1), t["q"], pos[:4], pos),
            {"p": _u(rng, 3, 3, 2), "q": _u(rng, 2, 4, 2)},
        ),
        "scene_aware_affinity": (
            lambda t: scene_aware_affinity(t["q"], t["k"], t["c"], PositionBucket(t["p"], 1), pos, pos),
            {"q": _u(rng, 9, 2), "k": _u(rng, 9, 2), "c": _u(rng, 2), "p": _u(rng, 3, 3, 2)},
        ),
    }


def _ccg_cases(rng) -> dict[str, tuple]:
    grid = PatchGrid(3, 4, 2, 2)
    return {
        "pre_classify": (
            lambda t: pre_classify(t["r"], PreClassifier(t["c1"], t["c2"])),
            {"r": _u(rng, 2, 2, 3), "c1": _u(rng, 3, 3), "c2": _u(rng, 3, 2)},
        ),
        "class_centers": (
            lambda t: class_centers(t["r"], t["d"]).centers,
            {"r": _u(rng, 2, 3, 3), "d": _u(rng, 2, 3, 2)},
        ),
        "scatter_centers": (
            lambda t: scatter_centers(class_centers(t["r"], t["d"]), t["d"]),
            {"r": _u(rng, 2, 3, 3), "d": _u(rng, 2, 3, 2)},
        ),
        "local_class_centers": (
            lambda t: local_class_centers(t["r"], t["d"], grid.valid_mask()),
            {"r": _u(rng, 4, 2, 2, 3), "d": _u(rng, 4, 2, 2, 2)},
        ),
        "split_stitch_padded": (
            lambda t: stitch_patches(ops.mul(split_patches(t["x"], grid), 2.0), grid),
            {"x": _u(rng, 3, 4, 2)},
        ),
    }


def small_pipeline_config(seed: int = 0, **kw) -> SacaConfig:
    base = dict(
        height=8, width=8, c_backbone=4, c_attn=4, k_classes=3,
        patch_h=1, patch_w=2, xi=1, epsilon=2, seed=seed,
    )  # fmt: skip
    base.update(kw)
    return SacaConfig(**base)


_MAX_DRAWS = 200


def _pipeline_cases(rng, seed: int) -> dict[str, tuple]:
    cfg = small_pipeline_config(seed)
    model = SacaModel.init(cfg)
    grid = cfg.grid()
    # Redraw until every patch sees two or more arg-max classes; a patch
    # with a single class has identical keys and values, so its attention
    # gradient is exactly zero and the check would compare rounding noise.
    for _ in range(_MAX_DRAWS):
        for t in model.parameters().values():
            t.data = rng.uniform(-1.0, 1.0, size=t.shape)
        image = _u(rng, cfg.height, cfg.width, 3)
        classes = pre_classify(stub_backbone(image, model.backbone), model.pre).data.argmax(-1)
        tiles = classes.reshape(grid.n_h, grid.h, grid.n_w, grid.w).transpose(0, 2, 1, 3)
        mixed = sum(len(np.unique(t)) > 1 for t in tiles.reshape(-1, grid.h * grid.w))
        if mixed == grid.n_patches:
            break
    labels = rng.integers(0, cfg.k_classes, size=(cfg.height, cfg.width))
    labels[0, :3] = 255
    params = model.parameters()

    def full_loss(_t):
        main, aux = saca_forward(image, model)
        return loss(main, aux, labels, cfg.aux_loss_weight)

    bb_inputs = {"image": _u(rng, 4, 4, 3), **model.backbone.parameters()}

    def backbone(t):
        return stub_backbone(t["image"], model.backbone)

    return {
        "stub_backbone": (backbone, bb_inputs),
        "saca_loss": (full_loss, params),
    }


SUITES = {
    "primitives": lambda rng, seed: _primitive_cases(rng),
    "attention": lambda rng, seed: _attention_cases(rng),
    "context": lambda rng, seed: _context_cases(rng),
    "position": lambda rng, seed: _position_cases(rng),
    "ccg": lambda rng, seed: _ccg_cases(rng),
    "pipeline": _pipeline_cases,
}


def run_suite(name: str, seeds: Sequence[int] = range(5)) -> list[GradResult]:
    """Every case of one suite on each seed; one result per (case, input tensor)."""
    results = []
    tol = PIPELINE_TOL if name == "pipeline" else PRIMITIVE_TOL
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for case, (build, inputs) in SUITES[name](rng, seed).items():
            if name == "pipeline" and case == "saca_loss":
                errors = check_gradients(lambda: build(inputs), inputs)
            else:
                errors = _case(rng, build, inputs)
            for input_name, err in errors.items():
                results.append(GradResult(name, f"{case}[{input_name}]", seed, err, tol))
    return results


def run_all(modules: Sequence[str] = tuple(SUITES), seeds: Sequence[int] = range(5)) -> list[GradResult]:
    out = []
    for name in modules:
        out.extend(run_suite(name, seeds))
    return out
