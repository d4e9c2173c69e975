"""The hierarchical backbone: patch embedding, stages of DWM/DSW block pairs, head."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional


from .dwm import DmswMode, DynamicWindowModule
from .nn import Initializer, LayerNorm, Linear, Module
from .tensor import Precision, ShapeError, Tensor, load_tensor, ops, save_tensor
from .windows import WindowSet, clamp_windows

PATCH = 4
HEAD_DIM = 32


class ConfigError(ValueError):
    """A model configuration violates a structural invariant."""


@dataclass(frozen=True)
class StageConfig:
    channels: int
    heads: int
    windows: tuple
    depth: int

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(int(w) for w in self.windows))


@dataclass(frozen=True)
class ModelConfig:
    stages: tuple
    image_size: tuple = (224, 224)
    num_classes: int = 1000
    dmsw_mode: DmswMode = DmswMode.DYNAMIC
    in_channels: int = 3
    mlp_ratio: int = 4

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "image_size", tuple(int(s) for s in self.image_size))
        object.__setattr__(self, "dmsw_mode", DmswMode(self.dmsw_mode))

    def validate(self, head_dim: Optional[int] = None) -> None:
        if not 1 <= len(self.stages) <= 4:
            raise ConfigError(f"expected 1 to 4 stages, got {len(self.stages)}")
        if len(self.image_size) != 2 or min(self.image_size) < 1:
            raise ConfigError(f"bad image size {self.image_size}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if self.mlp_ratio != 4:
            raise ConfigError("mlp_ratio is fixed at 4")
        for i, s in enumerate(self.stages):
            tag = f"stage {i + 1}"
            if s.depth < 2 or s.depth % 2:
                raise ConfigError(f"{tag}: depth {s.depth} must be a positive even number")
            if not s.windows or min(s.windows) < 1:
                raise ConfigError(f"{tag}: window sizes must be positive")
            if s.heads < 1 or s.channels % s.heads:
                raise ConfigError(f"{tag}: {s.channels} channels not divisible by {s.heads} heads")
            if s.heads % len(s.windows):
                raise ConfigError(f"{tag}: {s.heads} heads not divisible by n_win={len(s.windows)}")
            if s.channels % (2 * len(s.windows)):
                raise ConfigError(f"{tag}: channels must be divisible by 2*n_win")
            if head_dim is not None and s.channels != s.heads * head_dim:
                raise ConfigError(f"{tag}: channels {s.channels} != heads*{head_dim}")
            if i and s.channels != 2 * self.stages[i - 1].channels:
                raise ConfigError(f"{tag}: channels must double across patch merging")

    def with_mode(self, mode) -> "ModelConfig":
        return replace(self, dmsw_mode=DmswMode(mode))

    def stage_resolutions(self) -> list:
        """Feature-map size entering each stage's blocks (padding rounds up)."""
        h = math.ceil(self.image_size[0] / PATCH)
        w = math.ceil(self.image_size[1] / PATCH)
        out = []
        for i in range(len(self.stages)):
            if i:
                h, w = math.ceil(h / 2), math.ceil(w / 2)
            out.append((h, w))
        return out

    def effective_windows(self) -> list:
        return [clamp_windows(s.windows, h, w) for s, (h, w) in zip(self.stages, self.stage_resolutions())]

    # JSON
    def to_dict(self) -> dict:
        return {
            "image_size": list(self.image_size),
            "num_classes": self.num_classes,
            "dmsw_mode": self.dmsw_mode.value,
            "stages": [{"channels": s.channels, "heads": s.heads, "windows": list(s.windows), "depth": s.depth}
                       for s in self.stages],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {"image_size", "num_classes", "dmsw_mode", "stages", "in_channels", "mlp_ratio"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            size = d.get("image_size", [224, 224])
            if isinstance(size, int):
                size = [size, size]
            stages = [StageConfig(int(s["channels"]), int(s["heads"]), s["windows"], int(s["depth"]))
                      for s in d["stages"]]
            cfg = cls(stages=stages, image_size=size, num_classes=int(d.get("num_classes", 1000)),
                      dmsw_mode=d.get("dmsw_mode", "dynamic"), in_channels=int(d.get("in_channels", 3)),
                      mlp_ratio=int(d.get("mlp_ratio", 4)))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid config: {e}") from None
        cfg.validate()
        return cfg


def load_config(path) -> ModelConfig:
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return ModelConfig.from_dict(data)


def dw_t(image_size=(224, 224), num_classes: int = 1000, mode=DmswMode.DYNAMIC) -> ModelConfig:
    """DW-T: C=96, depths 2/2/6/2, heads 3/6/12/24, windows [7, 14, 21]."""
    stages = [StageConfig(96 * 2 ** i, 3 * 2 ** i, (7, 14, 21), d) for i, d in enumerate((2, 2, 6, 2))]
    return ModelConfig(stages, image_size, num_classes, DmswMode(mode))


def dw_b(image_size=(224, 224), num_classes: int = 1000, mode=DmswMode.DYNAMIC) -> ModelConfig:
    """DW-B: C=128, depths 2/2/18/2, heads 4/8/16/32, windows [7, 12, 17, 22]."""
    stages = [StageConfig(128 * 2 ** i, 4 * 2 ** i, (7, 12, 17, 22), d) for i, d in enumerate((2, 2, 18, 2))]
    return ModelConfig(stages, image_size, num_classes, DmswMode(mode))


def swin_t_like(window: int = 7, image_size=(224, 224), num_classes: int = 1000) -> ModelConfig:
    """Single-window, DMSW-off layout: the plain shifted-window baseline."""
    stages = [StageConfig(96 * 2 ** i, 3 * 2 ** i, (window,), d) for i, d in enumerate((2, 2, 6, 2))]
    return ModelConfig(stages, image_size, num_classes, DmswMode.OFF)


def toy_config(mode=DmswMode.DYNAMIC, num_classes: int = 10) -> ModelConfig:
    """Two-stage desk-scale model used for gradient checks (39,006 parameters)."""
    stages = [StageConfig(16, 2, (2, 4), 2), StageConfig(32, 4, (2, 4), 2)]
    return ModelConfig(stages, (16, 16), num_classes, DmswMode(mode))


PRESETS = {"dw-t": dw_t, "dw-b": dw_b, "swin-t": swin_t_like, "toy": toy_config}


# ---------------------------------------------------------------- layers

class PatchEmbed(Module):
    """Non-overlapping 4x4 patches -> 48 values -> linear -> LayerNorm."""

    def __init__(self, init: Initializer, in_channels: int, dim: int, name: str = "patch_embed"):
        self.in_channels = in_channels
        self.dim = dim
        self.proj = Linear(init, PATCH * PATCH * in_channels, dim, f"{name}.proj")
        self.norm = LayerNorm(init, dim, f"{name}.norm")

    def __call__(self, image: Tensor) -> Tensor:
        return patch_embed(image, self)


def patch_embed(image: Tensor, p: PatchEmbed) -> Tensor:
    if image.ndim != 3 or image.shape[2] != p.in_channels:
        raise ShapeError(f"expected H x W x {p.in_channels} image, got {image.shape}")
    H, W, c = image.shape
    ph, pw = (-H) % PATCH, (-W) % PATCH
    x = ops.pad(image, [(0, ph), (0, pw), (0, 0)])
    Hp, Wp = H + ph, W + pw
    x = ops.reshape(x, (Hp // PATCH, PATCH, Wp // PATCH, PATCH, c))
    x = ops.reshape(ops.permute(x, (0, 2, 1, 3, 4)), (Hp // PATCH, Wp // PATCH, PATCH * PATCH * c))
    return p.norm(p.proj(x))


class PatchMerging(Module):
    """2x2 neighbourhood concat (row-major offsets) -> LayerNorm -> bias-free 4C -> 2C."""

    def __init__(self, init: Initializer, dim: int, name: str):
        self.dim = dim
        self.norm = LayerNorm(init, 4 * dim, f"{name}.norm")
        self.reduction = Linear(init, 4 * dim, 2 * dim, f"{name}.reduction", bias=False)

    def __call__(self, x: Tensor) -> Tensor:
        return patch_merge(x, self)


def patch_merge(x: Tensor, p: PatchMerging) -> Tensor:
    H, W, C = x.shape
    if C != p.dim:
        raise ShapeError(f"expected {p.dim} channels, got {C}")
    x = ops.pad(x, [(0, H % 2), (0, W % 2), (0, 0)])
    Hp, Wp = H + H % 2, W + W % 2
    x = ops.reshape(x, (Hp // 2, 2, Wp // 2, 2, C))
    x = ops.reshape(ops.permute(x, (0, 2, 1, 3, 4)), (Hp // 2, Wp // 2, 4 * C))
    return p.reduction(p.norm(x))


class Mlp(Module):
    def __init__(self, init: Initializer, dim: int, ratio: int, name: str):
        self.fc1 = Linear(init, dim, ratio * dim, f"{name}.fc1")
        self.fc2 = Linear(init, ratio * dim, dim, f"{name}.fc2")

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class DWBlock(Module):
    """One transformer block; ``shifted`` makes it the DSW twin."""

    def __init__(self, init: Initializer, dim: int, heads: int, windows: WindowSet, mode: DmswMode,
                 shifted: bool, mlp_ratio: int, name: str):
        self.dim = dim
        self.shifted = shifted
        self.norm1 = LayerNorm(init, dim, f"{name}.norm1")
        self.dwm = DynamicWindowModule(init, dim, heads, windows, mode, f"{name}.dwm")
        self.norm2 = LayerNorm(init, dim, f"{name}.norm2")
        self.mlp = Mlp(init, dim, mlp_ratio, f"{name}.mlp")

    def __call__(self, z: Tensor) -> Tensor:
        z_hat = self.dwm(self.norm1(z), self.shifted) + z
        return self.mlp(self.norm2(z_hat)) + z_hat


def dw_block_pair(x: Tensor, dwm_block: DWBlock, dsw_block: DWBlock) -> Tensor:
    return dsw_block(dwm_block(x))


class Stage(Module):
    def __init__(self, init: Initializer, index: int, cfg: StageConfig, windows: WindowSet,
                 mode: DmswMode, mlp_ratio: int, in_dim: Optional[int]):
        name = f"stages.{index}"
        self.index = index
        self.merge = PatchMerging(init, in_dim, f"{name}.merge") if in_dim is not None else None
        self.blocks = [DWBlock(init, cfg.channels, cfg.heads, windows, mode, j % 2 == 1, mlp_ratio,
                               f"{name}.blocks.{j}") for j in range(cfg.depth)]


class Head(Module):
    """LayerNorm -> global average pool -> linear classifier."""

    def __init__(self, init: Initializer, dim: int, num_classes: int):
        self.norm = LayerNorm(init, dim, "head.norm")
        self.fc = Linear(init, dim, num_classes, "head.fc")

    def __call__(self, x: Tensor) -> Tensor:
        pooled = ops.mean(self.norm(x), (0, 1))
        return self.fc(pooled)


@dataclass
class TraceEntry:
    name: str
    input_shape: tuple
    output_shape: tuple
    windows: Optional[tuple] = None

    def line(self) -> str:
        fmt = lambda s: "x".join(str(d) for d in s)
        extra = f"  windows={list(self.windows)}" if self.windows is not None else ""
        return f"{self.name:<24} {fmt(self.input_shape):>14} -> {fmt(self.output_shape):<14}{extra}".rstrip()


class DWViT(Module):
    def __init__(self, cfg: ModelConfig, init: Initializer):
        cfg.validate()
        self.config = cfg
        self.precision = init.precision
        self.patch_embed = PatchEmbed(init, cfg.in_channels, cfg.stages[0].channels)
        self.stages = []
        prev = None
        for i, (s, win) in enumerate(zip(cfg.stages, cfg.effective_windows())):
            self.stages.append(Stage(init, i, s, win, cfg.dmsw_mode, cfg.mlp_ratio, prev))
            prev = s.channels
        self.head = Head(init, prev, cfg.num_classes)

    def features(self, image: Tensor, record: Optional[list] = None) -> list:
        """Per-stage output maps."""
        def log(name, a, b, windows=None):
            if record is not None:
                record.append(TraceEntry(name, a.shape, b.shape, windows))
            return b

        expected = tuple(self.config.image_size) + (self.config.in_channels,)
        if image.shape != expected:
            raise ShapeError(f"model built for input {expected}, got {image.shape}")
        if image.dtype != self.precision.dtype:
            image = ops.cast(image, self.precision)
        x = log("patch_embed", image, self.patch_embed(image))
        outs = []
        for stage in self.stages:
            if stage.merge is not None:
                x = log(f"stages.{stage.index}.merge", x, stage.merge(x))
            for j, block in enumerate(stage.blocks):
                kind = "dsw" if block.shifted else "dwm"
                x = log(f"stages.{stage.index}.blocks.{j}.{kind}", x, block(x),
                        block.dwm.windows.effective)
            outs.append(x)
        return outs

    def __call__(self, image: Tensor, record: Optional[list] = None) -> Tensor:
        x = self.features(image, record)[-1]
        logits = self.head(x)
        if record is not None:
            record.append(TraceEntry("head", x.shape, logits.shape))
        return logits

    def trace(self) -> list:
        return trace_config(self.config)


def trace_config(cfg: ModelConfig) -> list:
    """Layer-by-layer shapes derived from the configuration alone."""
    cfg.validate()
    H, W = cfg.image_size
    entries = []
    h, w = cfg.stage_resolutions()[0]
    entries.append(TraceEntry("patch_embed", (H, W, cfg.in_channels), (h, w, cfg.stages[0].channels)))
    prev = cfg.stages[0].channels
    for i, (s, (h, w), win) in enumerate(zip(cfg.stages, cfg.stage_resolutions(), cfg.effective_windows())):
        if i:
            ph, pw = entries[-1].output_shape[:2]
            entries.append(TraceEntry(f"stages.{i}.merge", (ph, pw, prev), (h, w, s.channels)))
        for j in range(s.depth):
            kind = "dsw" if j % 2 else "dwm"
            entries.append(TraceEntry(f"stages.{i}.blocks.{j}.{kind}", (h, w, s.channels),
                                      (h, w, s.channels), win.effective))
        prev = s.channels
    entries.append(TraceEntry("head", (h, w, prev), (cfg.num_classes,)))
    return entries


def build_model(cfg: ModelConfig, seed: int = 0, precision: Precision = Precision.F32,
                materialize: bool = True) -> DWViT:
    """Deterministically construct a model; same ``(cfg, seed, precision)`` gives identical weights."""
    return DWViT(cfg, Initializer(seed, precision, materialize))


def forward(model: DWViT, image: Tensor) -> Tensor:
    return model(image)


# ---------------------------------------------------------------- checkpoints

MANIFEST = "manifest.json"


def save_checkpoint(model: DWViT, directory) -> None:
    """One ``<name>.dwt`` file per parameter plus a name -> shape manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name, p in model.named_parameters():
        save_tensor(directory / f"{name}.dwt", p)
        manifest[name] = list(p.shape)
    with open(directory / MANIFEST, "w") as f:
        json.dump({"config": model.config.to_dict(), "parameters": manifest}, f, indent=2)


def load_checkpoint(model: DWViT, directory) -> DWViT:
    directory = Path(directory)
    try:
        with open(directory / MANIFEST) as f:
            manifest = json.load(f)["parameters"]
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise ConfigError(f"cannot read checkpoint manifest in {directory}: {e}") from None
    expected = dict(model.named_parameters())
    if set(manifest) != set(expected):
        missing = sorted(set(expected) - set(manifest))[:3]
        extra = sorted(set(manifest) - set(expected))[:3]
        raise ConfigError(f"checkpoint does not match model (missing {missing}, unexpected {extra})")
    for name, p in expected.items():
        t = load_tensor(directory / f"{name}.dwt")
        if list(t.shape) != list(manifest[name]) or t.shape != p.shape:
            raise ShapeError(f"{name}: checkpoint shape {t.shape} != model shape {p.shape}")
        if t.dtype != p.dtype:
            t = Tensor.wrap(t.data.astype(p.dtype))
        model.set_parameter(name, t)
    return model
