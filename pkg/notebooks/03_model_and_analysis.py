"""
Building a backbone and counting its cost
=========================================
"""

# %%
import tempfile

import numpy as np

from dwvit.analyzer import analyze, closed_form_dwm
from dwvit.dwm import DmswMode
from dwvit.model import build_model, dw_t, load_checkpoint, save_checkpoint, toy_config, trace_config
from dwvit.tensor import Tensor

# %% the shape trace needs no weights
for entry in trace_config(dw_t())[:6]:
    print(entry.line())

# %% parameter and FLOP totals for the three modes
for mode in DmswMode:
    a = analyze(dw_t(mode=mode))
    print(f"{mode.value:<8} {a.params.total / 1e6:6.2f}M {a.flops.total / 1e9:5.2f}G")

# %% per-block counts agree with the closed form
a = analyze(dw_t())
print(all(c.matches for c in a.comparison))
print(closed_form_dwm(56, 56, 96, 3, [7, 14, 21]))

# %% a small model runs end to end
cfg = toy_config()
model = build_model(cfg, seed=0)
image = Tensor(np.random.default_rng(0).standard_normal((16, 16, 3)), dtype=np.float32)
logits = model(image)
print(logits.shape, logits.data[:3])

# %% checkpoints are a directory of tensor files plus a manifest
with tempfile.TemporaryDirectory() as d:
    save_checkpoint(model, d)
    again = load_checkpoint(build_model(cfg, seed=1), d)
    print(np.array_equal(again(image).data, logits.data))
