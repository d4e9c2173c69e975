"""Parameter and FLOP accounting, and the closed-form DWM cost it must agree with.

FLOPs follow the multiply-accumulate convention: one MAC is one FLOP, bias
additions are free, and softmax, norms, activations, pooling and the branch
weighting multiplies are tallied in a separate ``uncounted`` tree.
Attention is charged for real (unpadded) query tokens only; the extra work
spent on padded queries is reported as ``padding_overhead``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .dwm import DmswMode
from .model import ModelConfig, build_model
from .nn import Linear

CONVENTION = "1 MAC = 1 FLOP; bias adds free; softmax/norm/activation/pool/weighting uncounted"


@dataclass
class CountNode:
    """A named count; internal nodes hold nothing themselves and sum their children."""

    name: str
    own: int = 0
    children: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.own + sum(c.total for c in self.children.values())

    def child(self, name: str, **meta) -> "CountNode":
        if name not in self.children:
            self.children[name] = CountNode(name, meta=meta)
        return self.children[name]

    def add(self, name: str, count: int) -> "CountNode":
        node = self.child(name)
        node.own += int(count)
        return node

    def __getitem__(self, path: str) -> "CountNode":
        node = self
        for part in path.split("/"):
            node = node.children[part]
        return node

    def get(self, path: str, default: int = 0) -> int:
        try:
            return self[path].total
        except KeyError:
            return default

    def walk(self, prefix: str = ""):
        path = f"{prefix}/{self.name}" if prefix else self.name
        yield path, self
        for c in self.children.values():
            yield from c.walk(path)

    def is_consistent(self) -> bool:
        return all(n.own == 0 or not n.children for _, n in self.walk())

    def to_dict(self) -> dict:
        d = {"name": self.name, "total": self.total}
        if self.children:
            d["children"] = [c.to_dict() for c in self.children.values()]
        return d


@dataclass
class ParamReport:
    root: CountNode

    @property
    def total(self) -> int:
        return self.root.total

    def by_kind(self) -> dict:
        """Totals keyed by layer kind (last module name before the tensor name)."""
        out = {}
        for path, node in self.root.walk():
            if node.children:
                continue
            parts = path.split("/")
            kind = next((p for p in reversed(parts[:-1]) if not p.isdigit()), parts[0])
            out[kind] = out.get(kind, 0) + node.total
        return out

    def to_dict(self) -> dict:
        return {"total": self.total, "by_kind": self.by_kind(), "tree": self.root.to_dict()}


@dataclass
class FlopReport:
    counted: CountNode
    uncounted: CountNode
    input_res: tuple
    convention: str = CONVENTION

    @property
    def total(self) -> int:
        return self.counted.total

    def blocks(self):
        for stage in self.counted.children.values():
            for node in stage.children.values():
                if "block" in node.meta:
                    yield node

    def executed_macs(self) -> int:
        """MACs an actual forward pass performs (counted plus padded-query work)."""
        return self.counted.total + self.uncounted.get("padding_overhead")

    def to_dict(self) -> dict:
        return {"convention": self.convention, "input_res": list(self.input_res), "total": self.total,
                "counted": self.counted.to_dict(), "uncounted": self.uncounted.to_dict()}


# ---------------------------------------------------------------- parameters

def count_params(model) -> ParamReport:
    root = CountNode("model")
    for name, p in model.named_parameters():
        parts = name.split(".")
        node = root
        for part in parts[:-1]:
            node = node.child(part)
        node.add(parts[-1], p.size)
    return ParamReport(root)


# ---------------------------------------------------------------- FLOPs

def _linear(node: CountNode, name: str, layer: Linear, rows: int):
    node.add(name, layer.macs(rows))


def _block_flops(block, h: int, w: int, counted: CountNode, uncounted: CountNode, tag: str):
    hw = h * w
    attn, dmsw = block.dwm.attn, block.dwm.dmsw
    C, n, d = attn.dim, attn.n_win, attn.head_dim
    hb, cb = attn.heads // n, attn.branch_dim
    meta = {"block": tag, "h": h, "w": w, "C": C, "n_win": n, "windows": list(attn.windows.effective),
            "mode": block.dwm.mode.value}
    node = counted.child(tag.split("/")[-1], **meta)

    msw = node.child("msw")
    _linear(msw, "qkv", attn.qkv, hw)
    softmax_entries = overhead = 0
    for win in attn.windows.effective:
        hp, wp = math.ceil(h / win) * win, math.ceil(w / win) * win
        msw.add("attn_qk", hw * win * win * hb * d)
        msw.add("attn_av", hw * win * win * hb * d)
        overhead += 2 * (hp * wp - hw) * win * win * hb * d
        softmax_entries += hp * wp * win * win * hb
    _linear(msw, "ffc1", dmsw.ffc1, hw)

    mode = block.dwm.mode
    if mode is not DmswMode.OFF:
        sel = node.child("dmsw")
        if mode is DmswMode.DYNAMIC:
            _linear(sel, "ffc2", dmsw.ffc2, 1)
            for i, f in enumerate(dmsw.falpha):
                sel.add("falpha", f.macs(1))
        _linear(sel, "ffc3", dmsw.ffc3, hw)
        _linear(sel, "ffc4", dmsw.ffc4, hw)

    mlp = node.child("mlp")
    _linear(mlp, "fc1", block.mlp.fc1, hw)
    _linear(mlp, "fc2", block.mlp.fc2, hw)

    uncounted.add("norm", 2 * hw * C)
    uncounted.add("softmax", softmax_entries)
    uncounted.add("padding_overhead", overhead)
    uncounted.add("gelu", hw * block.mlp.fc1.out_features)
    if mode is DmswMode.DYNAMIC:
        uncounted.add("gelu", hw * C + dmsw.reduced)
        uncounted.add("pooling", hw * C)
        uncounted.add("softmax", C)
    if mode is not DmswMode.OFF:
        uncounted.add("branch_weighting", hw * cb * n)


def count_flops(model, input_res=None) -> FlopReport:
    """Per-component MAC counts for one image.

    Args:
        model: a built :class:`DWViT` or a :class:`ModelConfig` (built lazily,
            without materialising weights).
        input_res: ``(H, W)``; defaults to the configured image size, which is
            the only resolution a built model accepts.
    """
    if isinstance(model, ModelConfig):
        model = build_model(model, materialize=False)
    cfg = model.config
    H, W = cfg.image_size if input_res is None else tuple(input_res)
    if (H, W) != tuple(cfg.image_size):
        raise ValueError(f"model was built for {cfg.image_size}, not {(H, W)}")
    counted, uncounted = CountNode("model"), CountNode("uncounted")
    h, w = math.ceil(H / 4), math.ceil(W / 4)
    _linear(counted.child("patch_embed"), "proj", model.patch_embed.proj, h * w)
    uncounted.add("norm", h * w * model.patch_embed.dim)
    for stage in model.stages:
        snode = counted.child(f"stage{stage.index + 1}")
        if stage.merge is not None:
            h, w = math.ceil(h / 2), math.ceil(w / 2)
            _linear(snode.child("merge"), "reduction", stage.merge.reduction, h * w)
            uncounted.add("norm", h * w * stage.merge.norm.dim)
        for j, block in enumerate(stage.blocks):
            _block_flops(block, h, w, snode, uncounted, f"stage{stage.index + 1}/block{j}")
    head = model.head
    _linear(counted.child("head"), "fc", head.fc, 1)
    uncounted.add("norm", h * w * head.norm.dim)
    uncounted.add("pooling", h * w * head.norm.dim)
    return FlopReport(counted, uncounted, (H, W))


# ---------------------------------------------------------------- closed form

def _exact(value: Fraction, what: str) -> int:
    if value.denominator != 1:
        raise ValueError(f"{what} is not an integer for these inputs ({value})")
    return value.numerator


def closed_form_dwm(h: int, w: int, C: int, n_win: int, wins):
    """Evaluate the DWM cost formulas literally, in exact arithmetic.

    Returns ``(omega_msw, omega_dmsw, omega_total)`` where
    ``omega_msw = 4hwC^2 + 2hw(C/n) sum(win_i^2)``,
    ``omega_dmsw = (1 + hw(1 + 1/n)) C^2/n`` and ``omega_total`` uses the
    combined form; the combined form must equal the sum of the other two.
    """
    wins = list(wins)
    if len(wins) != n_win:
        raise ValueError(f"expected {n_win} window sizes, got {len(wins)}")
    if min(h, w, C, n_win, *wins) < 1:
        raise ValueError("all arguments must be positive")
    hw, n, C = Fraction(h * w), Fraction(n_win), Fraction(C)
    sq = sum(Fraction(v * v) for v in wins)
    msw = 4 * hw * C ** 2 + 2 * hw * (C / n) * sq
    dmsw = (1 + hw * (1 + 1 / n)) * C ** 2 / n
    total = (1 + 4 * n + (hw + n) / (hw * n)) * hw / n * C ** 2 + 2 * hw * (C / n) * sq
    if total != msw + dmsw:
        raise ArithmeticError("combined DWM formula disagrees with its parts")
    return _exact(msw, "omega_msw"), _exact(dmsw, "omega_dmsw"), _exact(total, "omega_total")


@dataclass
class BlockComparison:
    block: str
    mode: str
    measured_msw: int
    closed_msw: int
    measured_dmsw: int
    closed_dmsw: Optional[int]

    @property
    def delta_msw(self) -> int:
        return self.measured_msw - self.closed_msw

    @property
    def delta_dmsw(self) -> Optional[int]:
        return None if self.closed_dmsw is None else self.measured_dmsw - self.closed_dmsw

    @property
    def matches(self) -> bool:
        return self.delta_msw == 0 and self.delta_dmsw in (0, None)

    def to_dict(self) -> dict:
        return {"block": self.block, "mode": self.mode, "measured_msw": self.measured_msw,
                "closed_msw": self.closed_msw, "delta_msw": self.delta_msw,
                "measured_dmsw": self.measured_dmsw, "closed_dmsw": self.closed_dmsw,
                "delta_dmsw": self.delta_dmsw}


def compare(measured: FlopReport) -> list:
    """Per-block deltas between counted attention/DMSW MACs and the closed form.

    The DMSW term is only comparable in dynamic mode; other modes report it as
    not applicable (``closed_dmsw=None``).
    """
    out = []
    for node in measured.blocks():
        m = node.meta
        msw, dmsw, _ = closed_form_dwm(m["h"], m["w"], m["C"], m["n_win"], m["windows"])
        dynamic = m["mode"] == DmswMode.DYNAMIC.value
        out.append(BlockComparison(m["block"], m["mode"], node.get("msw"), msw, node.get("dmsw"),
                                   dmsw if dynamic else None))
    return out


# ---------------------------------------------------------------- output

@dataclass
class Analysis:
    config: ModelConfig
    params: ParamReport
    flops: FlopReport
    comparison: list

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "params": self.params.to_dict(),
            "flops": self.flops.to_dict(),
            "closed_form": {"all_match": all(c.matches for c in self.comparison),
                            "blocks": [c.to_dict() for c in self.comparison]},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def to_table(self) -> str:
        lines = [f"parameters: {self.params.total:,} ({self.params.total / 1e6:.2f}M)"]
        for kind, n in sorted(self.params.by_kind().items()):
            lines.append(f"  {kind:<20} {n:>14,}")
        f = self.flops
        lines.append(f"FLOPs (MAC) at {f.input_res[0]}x{f.input_res[1]}: {f.total:,} ({f.total / 1e9:.2f}G)")
        for name, node in f.counted.children.items():
            lines.append(f"  {name:<20} {node.total:>16,}")
        lines.append("uncounted:")
        for name, node in f.uncounted.children.items():
            lines.append(f"  {name:<20} {node.total:>16,}")
        lines.append("closed form (per block):")
        lines.append(f"  {'block':<16} {'mode':<8} {'msw':>14} {'delta':>8} {'dmsw':>12} {'delta':>8}")
        for c in self.comparison:
            dd = "n/a" if c.delta_dmsw is None else str(c.delta_dmsw)
            lines.append(f"  {c.block:<16} {c.mode:<8} {c.measured_msw:>14,} {c.delta_msw:>8} "
                         f"{c.measured_dmsw:>12,} {dd:>8}")
        return "\n".join(lines)


def analyze(cfg: ModelConfig, image_size=None) -> Analysis:
    if image_size is not None:
        cfg = ModelConfig(cfg.stages, tuple(image_size), cfg.num_classes, cfg.dmsw_mode,
                          cfg.in_channels, cfg.mlp_ratio)
    model = build_model(cfg, materialize=False)
    flops = count_flops(model)
    return Analysis(cfg, count_params(model), flops, compare(flops))
