"""Parameter containers and the two basic layers everything else is built from."""
from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from .tensor import Precision, ShapeError, Tensor, ops


class Initializer:
    """Deterministic parameter factory.

    Weights draw from a normal truncated to +-2 std, biases are zero. With
    ``materialize=False`` every parameter is zero-filled instead, which is
    enough for shape and count analysis and avoids touching the memory.
    """

    def __init__(self, seed: int = 0, precision: Precision = Precision.F32, materialize: bool = True):
        self.rng = np.random.default_rng(seed)
        self.precision = precision
        self.materialize = materialize

    def _param(self, arr: np.ndarray, name: str) -> Tensor:
        return Tensor.wrap(arr, requires_grad=True, name=name)

    def trunc_normal(self, shape, name: str, std: float = 0.02) -> Tensor:
        dtype = self.precision.dtype
        if not self.materialize:
            return self._param(np.zeros(shape, dtype=dtype), name)
        x = self.rng.standard_normal(shape, dtype=np.float64)
        bad = np.abs(x) > 2.0
        while bad.any():
            x[bad] = self.rng.standard_normal(int(bad.sum()))
            bad = np.abs(x) > 2.0
        return self._param((x * std).astype(dtype), name)

    def zeros(self, shape, name: str) -> Tensor:
        return self._param(np.zeros(shape, dtype=self.precision.dtype), name)

    def ones(self, shape, name: str) -> Tensor:
        return self._param(np.ones(shape, dtype=self.precision.dtype), name)


class Module:
    """Minimal parameter tree: attributes holding parameters or submodules."""

    def _children(self) -> Iterator[tuple]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Tensor, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, (Tensor, Module)) for v in value):
                for i, v in enumerate(value):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for key, value in self._children():
            full = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def get_parameter(self, name: str) -> Tensor:
        obj = self
        for part in name.split("."):
            obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
        if not isinstance(obj, Tensor):
            raise KeyError(name)
        return obj

    def set_parameter(self, name: str, value: Tensor) -> None:
        """Swap in a replacement parameter of identical shape and precision."""
        old = self.get_parameter(name)
        if old.shape != value.shape or old.dtype != value.dtype:
            raise ShapeError(f"{name}: expected {old.shape}/{old.precision.name}, "
                             f"got {value.shape}/{value.precision.name}")
        param = Tensor.wrap(value.data, requires_grad=True, name=name) if not value.requires_grad else value
        parts = name.split(".")
        parent = self
        for part in parts[:-1]:
            parent = parent[int(part)] if isinstance(parent, (list, tuple)) else getattr(parent, part)
        if isinstance(parent, list):
            parent[int(parts[-1])] = param
        else:
            setattr(parent, parts[-1], param)

    def state_dict(self) -> dict:
        return dict(self.named_parameters())


class Linear(Module):
    """``Cin -> Cout`` affine layer; weight stored ``Cin x Cout``."""

    def __init__(self, init: Initializer, cin: int, cout: int, name: str, bias: bool = True):
        self.in_features = cin
        self.out_features = cout
        self.weight = init.trunc_normal((cin, cout), f"{name}.weight")
        self.bias = init.zeros((cout,), f"{name}.bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)

    def macs(self, rows: int) -> int:
        return rows * self.in_features * self.out_features


class LayerNorm(Module):
    eps = 1e-5

    def __init__(self, init: Initializer, dim: int, name: str):
        self.dim = dim
        self.weight = init.ones((dim,), f"{name}.weight")
        self.bias = init.zeros((dim,), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, self.eps)


def identity_linear(layer: Linear, scale: Optional[float] = None) -> None:
    """Reset ``layer`` to an (extended) identity with zero bias; test helper."""
    w = np.zeros((layer.in_features, layer.out_features), dtype=layer.weight.dtype)
    n = min(layer.in_features, layer.out_features)
    w[np.arange(n), np.arange(n)] = 1.0 if scale is None else scale
    layer.weight = Tensor.wrap(w, requires_grad=True, name=layer.weight.name)
    if layer.bias is not None:
        layer.bias = Tensor.wrap(np.zeros_like(layer.bias.data), requires_grad=True, name=layer.bias.name)
