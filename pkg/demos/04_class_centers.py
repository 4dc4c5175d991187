# %% [markdown]
# # Class centers and patch-local attention inputs
#
# A pre-classifier assigns every pixel a class distribution. Each class center
# is a softmax-weighted average of pixel features, and the scatter step writes
# the center of each pixel's arg-max class back onto the grid.

# %%
import numpy as np

from sacanet.class_center import (
    PatchGrid,
    PreClassifier,
    attention_inputs,
    class_centers,
    global_center_map,
    local_class_centers,
    pre_classify,
    scatter_centers,
    split_patches,
    stitch_patches,
)
from sacanet.tensor import Tensor

rng = np.random.default_rng(3)
r = Tensor(rng.normal(size=(8, 8, 6)))
pc = PreClassifier.init(channels=6, k_classes=3, rng=rng)
logits = pre_classify(r, pc)

centers = class_centers(r, logits)
print("centers per class:", centers.centers.shape)
s_g = scatter_centers(centers, logits)
print("distinct vectors on the map:", len(np.unique(s_g.data.reshape(-1, 6), axis=0)))

# %% [markdown]
# The same computation inside each patch gives local centers. A 4x4 grid over
# the 8x8 map yields four patches.

# %%
grid = PatchGrid(8, 8, 4, 4)
r_l = split_patches(r, grid)
s_l = local_class_centers(r_l, split_patches(logits, grid))
print("local centers:", s_l.shape)
print("round trip exact:", np.array_equal(stitch_patches(r_l, grid).data, r.data))

# %% [markdown]
# Queries come from pixels, keys from local centers, values from the global
# center map split by the same grid.

# %%
q, k, v = attention_inputs(r_l, s_l, split_patches(global_center_map(r, logits), grid))
print("Q, K, V:", q.shape, k.shape, v.shape)
