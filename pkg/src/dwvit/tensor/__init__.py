from .core import (
    NonFiniteError,
    Precision,
    PrecisionError,
    ShapeError,
    Tensor,
    backward,
    count_macs,
    is_grad_enabled,
    no_grad,
)
from .io import TensorFormatError, decode_tensor, encode_tensor, load_tensor, save_tensor
from . import ops
from .ops import (
    concat,
    crop,
    gelu,
    global_avg_pool,
    layer_norm,
    linear,
    matmul,
    mean,
    pad,
    permute,
    reshape,
    roll,
    softmax,
    split,
    take,
)

__all__ = [
    "NonFiniteError", "Precision", "PrecisionError", "ShapeError", "Tensor", "TensorFormatError",
    "backward", "concat", "count_macs", "crop", "decode_tensor", "encode_tensor", "gelu",
    "global_avg_pool", "is_grad_enabled", "layer_norm", "linear", "load_tensor", "matmul", "mean",
    "no_grad", "ops", "pad", "permute", "reshape", "roll", "save_tensor", "softmax", "split", "take",
]
