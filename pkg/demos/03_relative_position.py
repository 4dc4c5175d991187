# %% [markdown]
# # Relative position bias
#
# A trainable bucket holds one vector per clamped offset (dx, dy). The bias
# for a query/key pair is the dot product of the query with the vector at
# their offset, so it depends only on relative placement.

# %%
import numpy as np

from sacanet.position import PositionBucket, clamp_index, grid_positions, position_bias, scene_aware_affinity
from sacanet.attention import affinity
from sacanet.tensor import Tensor

rng = np.random.default_rng(2)
xi = 2
print("clamped offsets:", clamp_index(np.arange(-5, 6), xi))

bucket = PositionBucket(Tensor(rng.normal(size=(2 * xi + 1, 2 * xi + 1, 4))), xi)
pos = grid_positions(3, 3)
q = Tensor(rng.normal(size=(9, 4)))
bias = position_bias(bucket, q, pos, pos)
print("bias matrix shape:", bias.shape)

# %% [markdown]
# Shifting every position by the same amount gives the same bias.

# %%
moved = [(x + 17, y - 4) for x, y in pos]
print("translation invariant:", np.array_equal(bias.data, position_bias(bucket, q, moved, moved).data))

# %% [markdown]
# With a zero bucket and a gate of ones the scene-aware affinity is plain
# scaled dot-product affinity.

# %%
k = Tensor(rng.normal(size=(9, 4)))
saa = scene_aware_affinity(q, k, Tensor(np.ones(4)), PositionBucket.zeros(xi, 4), pos, pos)
print("max difference:", np.abs(saa.data - affinity(q, k).data).max())
