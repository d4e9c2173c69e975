"""Dynamic-window vision transformer: numpy forward pass, reverse-mode gradients,
parameter/FLOP accounting and brute-force oracles."""
from .dwm import DmswMode
from .model import (
    DWViT,
    ModelConfig,
    StageConfig,
    build_model,
    dw_b,
    dw_t,
    load_config,
    swin_t_like,
    toy_config,
    trace_config,
)
from .tensor import Precision, Tensor

__version__ = "0.1.0"

__all__ = [
    "DWViT", "DmswMode", "ModelConfig", "Precision", "StageConfig", "Tensor", "build_model", "dw_b",
    "dw_t", "load_config", "swin_t_like", "toy_config", "trace_config",
]
