"""
Windows, shifts and multi-scale attention
=========================================

Walks through the window plumbing on a tiny map, then runs one
multi-scale attention layer and checks it against the loop oracle.
"""

# %%
import numpy as np

from dwvit import oracle
from dwvit.attention import MswMsa, wmsa_branch
from dwvit.nn import Initializer
from dwvit.tensor import Tensor
from dwvit.windows import (WindowSet, clamp_windows, cyclic_shift, pad_to_multiple, rel_pos_index,
                           shift_attention_mask, window_partition, window_reverse)

rng = np.random.default_rng(0)

# %% a 6x6 map with one channel holding its own flat index
x = Tensor(np.arange(36.0).reshape(6, 6, 1))
w = window_partition(x, 3)
print(w.shape)                      # 4 windows of 9 tokens
print(w.data[1, :, 0])              # top-right window, row-major
print(np.array_equal(window_reverse(w, 6, 6).data, x.data))

# %% shifting moves the map toward the upper left, wrapping around
print(cyclic_shift(x, -1, -1).data[..., 0])

# %% maps that do not tile are zero padded on the bottom/right and cropped afterwards
xp, record = pad_to_multiple(Tensor(rng.standard_normal((5, 7, 2))), 3)
print(xp.shape, record)

# %% the shift mask keeps tokens from different wrapped regions apart
mask = shift_attention_mask(6, 6, 3, 1)
print((mask[3] == 0).sum(axis=1))   # bottom-right window: how many keys each query may see

# %% relative position index for a 2x2 window
print(rel_pos_index(2))

# %% windows larger than the map are clamped
print(clamp_windows((7, 14, 21), 14, 14).effective)

# %% one window covering the whole map is plain multi-head attention
side, heads, C = 4, 2, 8
tokens = rng.standard_normal((side * side, C))
w_qkv = rng.standard_normal((C, 3 * C)) / np.sqrt(C)
qkv = tokens @ w_qkv
q, k, v = (Tensor(qkv[:, i * C:(i + 1) * C].reshape(side, side, C)) for i in range(3))
ours = wmsa_branch(q, k, v, heads, side, 0, None).data.reshape(-1, C)
print(np.abs(ours - oracle.dense_msa(tokens, w_qkv, heads)).max())

# %% multi-scale attention: heads split into one group per window size
attn = MswMsa(Initializer(0), 24, 3, WindowSet.of([2, 3, 6]), "attn")
y, branches = attn(Tensor(rng.standard_normal((6, 6, 24)), dtype=np.float32), shifted=True)
print(y.shape, [b.shape for b in branches])
