"""
Checking the tape against finite differences
============================================
"""

# %%
import numpy as np

from dwvit.tensor import Tensor, backward, ops
from dwvit.verify import gradcheck

# %% gradients of a small expression
a = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
b = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
loss = ops.sum(ops.gelu(a * b))
grads = backward(loss)
print(grads[a].data, grads[b].data)

# %% the whole toy model in double precision
result = gradcheck(seed=0, samples=20)
print(result.num_parameters, f"{result.max_rel:.2e}", result.passed)
