"""
Fusing and selecting window branches
====================================

The module after multi-scale attention squeezes the map into a short code,
turns it into per-channel branch weights, and mixes the branches.
"""

# %%
import numpy as np

from dwvit.dwm import DmswMode, DmswParams, DynamicWindowModule, fuse, select_weights
from dwvit.nn import Initializer
from dwvit.tensor import Tensor
from dwvit.windows import WindowSet

rng = np.random.default_rng(1)
init = Initializer(0)

# %% DW-T stage-1 widths: 96 channels, three branches
p = DmswParams(init, 96, 3, DmswMode.DYNAMIC, "dmsw")
print(p.reduced)                                  # 96 / (2*3)
y_msw = Tensor(rng.standard_normal((14, 14, 96)), dtype=np.float32)
y_hat, code = fuse(y_msw, p)
print(y_hat.shape, code.shape)

# %% branch weights: one softmax per channel across the three branches
alpha = select_weights(code, p)
print(alpha.shape, alpha.data.sum(axis=0)[:4])

# %% the three modes differ only in how many parameters they carry
for mode in DmswMode:
    print(mode.value, DmswParams(init, 96, 3, mode, "d").num_parameters())

# %% a full module keeps the feature map shape
dwm = DynamicWindowModule(init, 96, 3, WindowSet.of([7, 14, 14]), DmswMode.DYNAMIC, "dwm")
print(dwm(y_msw, shifted=True).shape)
