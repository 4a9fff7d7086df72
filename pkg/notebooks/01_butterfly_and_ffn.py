# %% [markdown]
# # Butterfly channel mixing and the spatial FFN
#
# A butterfly layer mixes N channels in log2(N) sparse stages. This notebook
# checks it against its dense matrix, then compares the MAC cost of the
# spatial FFN with a standard token FFN.

# %%
import numpy as np

from lightjdt import tensor as T
from lightjdt.butterfly import ButterflyLayer, bt_forward, bt_macs, dense_pointwise_macs, to_dense
from lightjdt.encoder import ScaleLayout, SpatialFFN, StandardFFNTokens, TokenSequence, ffn_macs_comparison
from lightjdt.tensor import Tensor

rng = np.random.default_rng(0)
layer = ButterflyLayer(8, rng)
x = rng.standard_normal((2, 8))
dense = to_dense(layer)
print("max |butterfly - dense|:", np.abs(bt_forward(layer, Tensor(x), axis=1).data - x @ dense.T).max())
print("nonzero pattern of the dense equivalent is full:", np.count_nonzero(dense), "of", dense.size)

# %% [markdown]
# Cost grows as 2 N log2 N instead of N squared.

# %%
for n in (16, 64, 256, 1024):
    print(f"N={n:5d}  butterfly {bt_macs(n):9,d}  dense {dense_pointwise_macs(n):11,d}")

# %% [markdown]
# The spatial FFN against a standard FFN with expansion 8, at 256 channels.
# The executed count comes from the MAC counter, not from a formula.

# %%
layout = ScaleLayout(((4, 4), (2, 2), (1, 2), (1, 1)), 256)
tok = TokenSequence(Tensor(rng.standard_normal((1, layout.num_tokens, 256))), layout)
with T.count_macs() as spatial:
    SpatialFFN(rng, 256)(tok)
with T.count_macs() as standard:
    StandardFFNTokens(rng, 256, 8)(tok)
print(f"per token: spatial {spatial.total / layout.num_tokens:,.0f}  standard {standard.total / layout.num_tokens:,.0f}")
print("ratio", spatial.total / standard.total, "formula", ffn_macs_comparison(256, 8)[2])
