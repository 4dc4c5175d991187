# %% [markdown]
# # Scaled dot-product attention
#
# Queries, keys and values are 1x1 projections of three feature maps. Every
# query pixel is compared with every key pixel, the scores are softmaxed per
# row and used to average the values.

# %%
import numpy as np

from sacanet import ops
from sacanet.attention import AttentionProjections, affinity, flatten_spatial, general_attention, project
from sacanet.tensor import GradTape, Tensor

rng = np.random.default_rng(0)
x = Tensor(rng.uniform(-1, 1, (4, 4, 3)))
proj = AttentionProjections.init(c_in=3, c_out=8, rng=rng)

# %% [markdown]
# Self-attention uses the same map three times. The output keeps the spatial
# layout and has the projected channel count.

# %%
out = general_attention(x, x, x, proj)
print("output shape:", out.shape)

# %% [markdown]
# The attention weights are an ordinary softmax over the scaled affinities,
# so each row sums to one.

# %%
q = flatten_spatial(project(x, proj.wq))
k = flatten_spatial(project(x, proj.wk))
alpha = ops.softmax(affinity(q, k), axis=-1)
print("row sums:", np.round(alpha.data.sum(-1), 12))
print("most attended key for pixel 0:", int(alpha.data[0].argmax()))

# %% [markdown]
# Gradients come from the tape. Only leaves created with
# ``requires_grad=True`` receive them.

# %%
proj.wv.requires_grad = True
with GradTape() as tape:
    total = ops.sum(general_attention(x, x, x, proj))
tape.backward(total)
print("grad norm on the value projection:", np.linalg.norm(proj.wv.grad))
