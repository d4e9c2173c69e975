"""Regenerate the toy golden files: ``python3 tests/data/make_golden.py``.

Logits come from the straight-line oracle composition, not from the model's
own forward pass, using the seed-0 F64 toy weights.
"""
from pathlib import Path

import numpy as np

from dwvit import oracle
from dwvit.model import build_model, toy_config
from dwvit.tensor import Precision, Tensor, save_tensor

HERE = Path(__file__).parent


def golden_logits(image: np.ndarray) -> np.ndarray:
    cfg = toy_config()
    model = build_model(cfg, seed=0, precision=Precision.F64)
    weights = {n: p.data for n, p in model.named_parameters()}
    stages = [(s.heads, ws.effective, s.depth) for s, ws in zip(cfg.stages, cfg.effective_windows())]
    return oracle.backbone_reference(image, weights, stages, cfg.dmsw_mode.value)


def main():
    image = np.random.default_rng(0).standard_normal((16, 16, 3)).astype(np.float32)
    save_tensor(HERE / "toy_input.dwt", Tensor(image))
    save_tensor(HERE / "toy_logits_seed0.dwt", Tensor(golden_logits(image.astype(np.float64))))


if __name__ == "__main__":
    main()
