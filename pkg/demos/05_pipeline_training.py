# %% [markdown]
# # Full network on the synthetic toy task
#
# The toy generator draws Voronoi label maps with a colour per class plus
# noise. We train the full network briefly, then the same network with both
# refinements switched off and one patch covering the whole feature map.

# %%
import numpy as np

from sacanet.pipeline import SacaConfig, SacaModel, predict, saca_forward
from sacanet.tensor import Tensor
from sacanet.train import toy_splits, train_toy

cfg = SacaConfig(patch_h=4, patch_w=4, epsilon=4, learning_rate=0.2, steps=200)
train, held_out = toy_splits(cfg)

model = SacaModel.init(cfg)
main, aux = saca_forward(Tensor(train[0][0]), model)
print("logits:", main.shape, "aux logits:", aux.shape)

# %%
for name, c in [("full", cfg), ("baseline", cfg.baseline())]:
    model, trace = train_toy(c, train, eval_set=held_out)
    m = trace.eval_metrics
    print(f"{name:8s} loss {trace.losses[0]:.3f} -> {trace.losses[-1]:.3f}  held-out OA {m['OA']:.3f} mIoU {m['mIoU']:.3f}")

# %%
labels = predict(held_out[0][0], model)
print("predicted classes:", np.unique(labels))
