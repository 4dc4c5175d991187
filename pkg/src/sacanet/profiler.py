"""Closed-form parameter, FLOP and activation-memory counts for CCG + SAA.

Counts cover the class-center generation, the scene-aware attention and the
fusion head; the stub backbone is excluded. Conventions:

* a multiply-accumulate is 2 FLOPs,
* softmax costs 4 FLOPs per element,
* pooling costs 1 FLOP per input element,
* any other elementwise op (ReLU, sigmoid, add, scale, gate, arg-max compare)
  costs 1 FLOP per element,
* activations are stored at 4 bytes per scalar; parameters and gradients are
  not counted. Peak memory is the largest live set while patches are
  processed one after another.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from sacanet.errors import ConfigError
from sacanet.pipeline import SacaConfig

BYTES_PER_SCALAR = 4

CONVENTIONS = {
    "mac_flops": 2,
    "softmax_flops_per_element": 4,
    "pool_flops_per_element": 1,
    "elementwise_flops_per_element": 1,
    "activation_bytes_per_scalar": BYTES_PER_SCALAR,
    "memory_unit": "MB = 1e6 bytes",
    "scope": "pre-classifier, class centers, attention, head; backbone excluded",
}


@dataclass
class StageCost:
    stage: str
    params: int = 0
    flops: int = 0
    bytes: int = 0


@dataclass
class ProfileReport:
    params: int
    flops: int
    peak_activation_bytes: int
    breakdown: list[StageCost] = field(default_factory=list)
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))

    @classmethod
    def from_stages(cls, stages: list[StageCost], conventions: dict | None = None) -> "ProfileReport":
        return cls(
            params=sum(s.params for s in stages),
            flops=sum(s.flops for s in stages),
            peak_activation_bytes=sum(s.bytes for s in stages),
            breakdown=list(stages),
            conventions=dict(CONVENTIONS if conventions is None else conventions),
        )

    def stage(self, name: str) -> StageCost:
        for s in self.breakdown:
            if s.stage == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "params": self.params,
            "flops": self.flops,
            "peak_bytes": self.peak_activation_bytes,
            "breakdown": [asdict(s) for s in self.breakdown],
            "conventions": self.conventions,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileReport":
        return cls(
            params=int(d["params"]),
            flops=int(d["flops"]),
            peak_activation_bytes=int(d["peak_bytes"]),
            breakdown=[StageCost(**s) for s in d["breakdown"]],
            conventions=dict(d.get("conventions", {})),
        )


class _LiveSet:
    """Tracks allocations and remembers, per stage, what was live at the peak."""

    def __init__(self):
        self.live: dict[str, tuple[str, int]] = {}
        self.peak = -1
        self.at_peak: dict[str, int] = {}

    def alloc(self, name: str, stage: str, elems: int) -> None:
        self.live[name] = (stage, elems)
        total = sum(n for _, n in self.live.values())
        if total > self.peak:
            self.peak = total
            snapshot: dict[str, int] = {}
            for st, n in self.live.values():
                snapshot[st] = snapshot.get(st, 0) + n
            self.at_peak = snapshot

    def free(self, *names: str) -> None:
        for name in names:
            self.live.pop(name, None)


def profile(config: SacaConfig) -> ProfileReport:
    """Analytic cost of one forward pass at the configured image size."""
    if not isinstance(config, SacaConfig):
        raise ConfigError("profile expects a SacaConfig")
    config.validate()
    cb, ca, k = config.c_backbone, config.c_attn, config.k_classes
    grid = config.grid()
    fh, fw = config.feature_size
    n_pix = fh * fw
    n = grid.h * grid.w
    n_patch = grid.n_patches
    n_pad = n_patch * n
    extra_mask = n * n if grid.padded else 0

    stages = {
        "input": StageCost("input"),
        "pre_classify": StageCost(
            "pre_classify",
            params=cb * cb + cb * k,
            flops=2 * n_pix * cb * cb + n_pix * cb + 2 * n_pix * cb * k,
        ),
        "ccg_global": StageCost("ccg_global", flops=4 * k * n_pix + 2 * k * n_pix * cb + n_pix * k),
        "ccg_local": StageCost("ccg_local", flops=4 * k * n_pad + 2 * k * n_pad * cb + n_pad * k),
        "projection": StageCost("projection", params=3 * cb * ca, flops=3 * 2 * n_pad * cb * ca),
    }
    order = list(stages)
    if config.use_context:
        r = ca // config.epsilon
        relu = 2 * r if config.context_relu else 0
        per_patch = 2 * n * ca + 2 * (2 * ca * r + 2 * r * ca) + relu + ca + ca + n * ca
        stages["context"] = StageCost("context", params=2 * ca * r, flops=n_patch * per_patch)
        order.append("context")
    if config.use_position:
        side = 2 * config.xi + 1
        stages["position"] = StageCost("position", params=side * side * ca, flops=n_patch * (2 * n * n * ca + n * n))
        order.append("position")
    per_patch = 2 * n * n * ca + n * n + 4 * n * n + 2 * n * n * ca + extra_mask
    stages["attention"] = StageCost("attention", flops=n_patch * per_patch)
    up = 2 * config.height * fh * fw * k + 2 * config.height * config.width * fw * k
    stages["head"] = StageCost("head", params=(ca + cb) * k, flops=2 * n_pix * (ca + cb) * k + up)
    order += ["attention", "head"]

    mem = _LiveSet()
    mem.alloc("R", "input", n_pix * cb)
    mem.alloc("hidden", "pre_classify", n_pix * cb)
    mem.alloc("D", "pre_classify", n_pix * k)
    mem.free("hidden")
    mem.alloc("assign", "ccg_global", k * n_pix)
    mem.alloc("centers", "ccg_global", k * cb)
    mem.free("assign")
    mem.alloc("S", "ccg_global", n_pix * cb)
    mem.free("centers")
    mem.alloc("R_a", "attention", n_pad * ca)
    # one patch; every patch has the same footprint
    mem.alloc("assign_l", "ccg_local", k * n)
    mem.alloc("centers_l", "ccg_local", k * cb)
    mem.free("assign_l")
    mem.alloc("S_l", "ccg_local", n * cb)
    mem.free("centers_l")
    mem.alloc("q", "projection", n * ca)
    mem.alloc("k", "projection", n * ca)
    mem.free("S_l")
    mem.alloc("v", "projection", n * ca)
    if config.use_context:
        r = ca // config.epsilon
        mem.alloc("pooled", "context", 2 * ca)
        mem.alloc("ctx_hidden", "context", 2 * r)
        mem.alloc("gate", "context", ca)
        mem.free("pooled", "ctx_hidden")
        mem.alloc("q_gated", "context", n * ca)
        mem.free("gate")
    mem.alloc("logits", "attention", n * n)
    if config.use_position:
        mem.alloc("bias", "position", n * n)
        mem.free("bias")
    mem.alloc("alpha", "attention", n * n)
    mem.free("logits")
    mem.free("alpha", "q", "k", "v", "q_gated", "S")
    mem.alloc("fused_in", "head", n_pix * (ca + cb))
    mem.free("R_a", "R")
    mem.alloc("fused", "head", n_pix * k)
    mem.free("fused_in")
    mem.alloc("upsampled", "head", config.height * config.width * k)

    for name, elems in mem.at_peak.items():
        stages[name].bytes = elems * BYTES_PER_SCALAR
    return ProfileReport.from_stages([stages[s] for s in order])


def emit_report(report: ProfileReport, fmt: str = "json") -> str:
    """Exact-integer JSON, or a table in M / G / MB rounded to one decimal."""
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if fmt != "table":
        raise ValueError(f"unknown report format {fmt!r}")
    rows = [("stage", "Params (M)", "FLOPs (G)", "Memory (MB)")]
    for s in report.breakdown:
        rows.append((s.stage, f"{s.params / 1e6:.1f}", f"{s.flops / 1e9:.1f}", f"{s.bytes / 1e6:.1f}"))
    rows.append(
        (
            "total",
            f"{report.params / 1e6:.1f}",
            f"{report.flops / 1e9:.1f}",
            f"{report.peak_activation_bytes / 1e6:.1f}",
        )
    )
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = [" | ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)


def parse_report(text: str) -> ProfileReport:
    return ProfileReport.from_dict(json.loads(text))

