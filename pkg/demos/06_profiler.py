# %% [markdown]
# # Parameter, FLOP and memory profile
#
# Counts are analytic. A multiply-accumulate is two FLOPs and activations are
# four bytes each. The backbone is not counted.

# %%
from sacanet.pipeline import SacaConfig
from sacanet.profiler import emit_report, profile

small = SacaConfig(height=16, width=16, c_backbone=4, c_attn=4, epsilon=2, k_classes=2, xi=1, patch_h=2, patch_w=2)
rep = profile(small)
print("parameters:", rep.params)
for stage in rep.breakdown:
    print(f"  {stage.stage:14s} params {stage.params:5d} flops {stage.flops:8d} bytes {stage.bytes:7d}")

# %% [markdown]
# Attention cost per patch grows with the square of the patch area.

# %%
for side in (2, 4, 8):
    cfg = small.replace(height=64, width=64, patch_h=side, patch_w=side)
    per_patch = profile(cfg).stage("attention").flops / cfg.grid().n_patches
    print(f"patch {side}x{side}: {per_patch:.0f} attention FLOPs per patch")

# %% [markdown]
# At a realistic size the table reports millions of parameters, GFLOPs and MB.

# %%
large = SacaConfig(height=512, width=512, c_backbone=256, c_attn=256, k_classes=6, epsilon=16, patch_h=16, patch_w=16)
print(emit_report(profile(large), "table"))
