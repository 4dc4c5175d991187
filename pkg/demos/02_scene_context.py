# %% [markdown]
# # Scene context gate
#
# Average and max pooling summarise the query map per channel. A shared
# bottleneck MLP turns both summaries into a sigmoid gate that rescales the
# query channels before the affinity is computed.

# %%
import numpy as np

from sacanet.context import ContextMLP, context_vector, gate_queries
from sacanet.tensor import Tensor

rng = np.random.default_rng(1)
q_map = Tensor(rng.normal(size=(6, 6, 8)))
mlp = ContextMLP.init(channels=8, epsilon=4, rng=rng)

c = context_vector(q_map, mlp)
print("gate:", np.round(c.data, 3))

# %% [markdown]
# Pooling ignores where a pixel sits, so shuffling the pixels leaves the gate
# unchanged to the last bit.

# %%
shuffled = q_map.data.reshape(36, 8)[rng.permutation(36)].reshape(6, 6, 8)
print("identical after shuffle:", np.array_equal(c.data, context_vector(Tensor(shuffled), mlp).data))

# %% [markdown]
# A zero MLP produces a gate of exactly one half on every channel.

# %%
print("zero MLP gate:", context_vector(q_map, ContextMLP.zeros(8, 4)).data)

# %%
gated = gate_queries(Tensor(q_map.data.reshape(36, 8)), c)
print("gated query shape:", gated.shape)
