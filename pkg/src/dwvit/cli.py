"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace


from .analyzer import analyze
from .model import PRESETS, ConfigError, build_model, load_checkpoint, load_config, trace_config
from .tensor import Precision, ShapeError, TensorFormatError, load_tensor, no_grad, save_tensor
from .verify import gradcheck, selftest

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _config(args):
    if args.preset:
        cfg = PRESETS[args.preset]()
    elif args.config:
        cfg = load_config(args.config)
    else:
        raise UsageError("one of --config or --preset is required")
    if getattr(args, "image_size", None):
        cfg = replace(cfg, image_size=tuple(args.image_size))
    cfg.validate()
    return cfg


def _add_config_args(p, image_size: bool = True):
    p.add_argument("--config", metavar="PATH", help="model configuration (JSON)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in configuration instead of --config")
    if image_size:
        p.add_argument("--image-size", nargs=2, type=int, metavar=("H", "W"))


def cmd_trace(args) -> int:
    for entry in trace_config(_config(args)):
        print(entry.line())
    return EXIT_OK


def cmd_forward(args) -> int:
    cfg = _config(args)
    precision = Precision.F64 if args.precision == "f64" else Precision.F32
    image = load_tensor(args.input)
    expected = tuple(cfg.image_size) + (cfg.in_channels,)
    if image.shape != expected:
        raise ShapeError(f"input tensor has shape {image.shape}, config expects {expected}")
    model = build_model(cfg, seed=args.seed if args.seed is not None else 0, precision=precision)
    if args.weights:
        load_checkpoint(model, args.weights)
    with no_grad():
        logits = model(image)
    save_tensor(args.output, logits)
    print(f"wrote {logits.shape[0]} logits to {args.output}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    result = analyze(_config(args))
    print(result.to_json() if args.format == "json" else result.to_table())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.samples <= 0:
        print("warning: --samples 0, nothing to check", file=sys.stderr)
    result = gradcheck(seed=args.seed, samples=args.samples, epsilon=args.epsilon)
    for r in result.reports:
        print(r.line())
    print(f"{len(result.reports)} samples over {result.num_parameters} parameters, "
          f"max relative error {result.max_rel:.3e}")
    if not result.passed:
        for r in result.reports:
            if not r.passed:
                print(f"failed: {r.case}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_selftest(args) -> int:
    reports = selftest(args.seed)
    reports += gradcheck(seed=args.seed, samples=args.grad_samples).reports
    for r in reports:
        print(r.line())
    failed = [r for r in reports if not r.passed]
    for r in failed:
        print(f"failed: {r.case}", file=sys.stderr)
    print(f"{len(reports) - len(failed)}/{len(reports)} cases passed")
    return EXIT_FAIL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dwvit", description="Dynamic-window vision transformer toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="print per-layer shapes")
    _add_config_args(p)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("forward", help="run a forward pass on a tensor file")
    _add_config_args(p, image_size=False)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--weights", metavar="DIR", help="checkpoint directory")
    src.add_argument("--seed", type=int, help="generate weights deterministically from this seed")
    p.add_argument("--input", required=True, metavar="FILE.dwt")
    p.add_argument("--output", required=True, metavar="FILE.dwt")
    p.add_argument("--precision", choices=("f32", "f64"), default="f32")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("analyze", help="parameter/FLOP report and closed-form comparison")
    _add_config_args(p)
    p.add_argument("--format", choices=("json", "table"), default="table")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gradcheck", help="tape gradients vs finite differences on the toy model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", help="oracle and invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grad-samples", type=int, default=20)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ShapeError, TensorFormatError, OSError) as e:
        print(f"dwvit {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
