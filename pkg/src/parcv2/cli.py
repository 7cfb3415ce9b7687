"""``parcv2`` command line: init, forward, check, count, bench, resize.

Exit codes: 0 success, 1 verification failure, 2 usage or file-format
error, 3 non-finite numbers.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import perf, suites
from .model import (
    REFERENCE_COUNTS,
    VARIANTS,
    ModelConfig,
    ResolutionError,
    adapt_to_resolution,
    build_model,
    count_params_and_macs,
    model_forward,
)
from .tensor import DimensionError, NumericError, Rng, check_finite

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
PRECISIONS = {"f32": np.float32, "f64": np.float64}


class UsageError(Exception):
    """Bad flags or inputs; maps to exit code 2."""


def _configure_threads() -> None:
    raw = os.environ.get("PARC2_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"PARC2_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("PARC2_THREADS must be >= 0")
    if n:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def parse_dims(text: str, count: int, what: str) -> tuple[int, ...]:
    parts = text.lower().split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise UsageError(f"{what} must look like {'x'.join('N' * count)}, got {text!r}") from None
    if len(dims) != count or min(dims) < 1:
        raise UsageError(f"{what} needs {count} positive integers, got {text!r}")
    return dims


def load_run_config(path) -> tuple[ModelConfig, dict]:
    """Read a JSON run config: ``variant`` or explicit ``channels``/``blocks``,
    plus optional ``input_size``, ``num_classes``, ``seed``, ``precision``."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {path}: {e}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"config {path} must be a JSON object")
    raw = dict(raw)
    extra = {k: raw.pop(k) for k in ("seed", "precision") if k in raw}
    variant = raw.pop("variant", None)
    try:
        if variant is not None:
            channels, blocks = VARIANTS[str(variant).upper()]
            raw.setdefault("channels", channels)
            raw.setdefault("blocks", blocks)
        return ModelConfig.from_dict(raw), extra
    except (KeyError, TypeError, ValueError) as e:
        raise UsageError(f"invalid config {path}: {e}") from None


def _config_from_args(args, input_size=None) -> tuple[ModelConfig, dict]:
    if args.config:
        cfg, extra = load_run_config(args.config)
        if input_size is not None and tuple(input_size) != cfg.input_size:
            raise UsageError(f"input is {input_size[0]}x{input_size[1]} but config expects "
                             f"{cfg.input_size[0]}x{cfg.input_size[1]}")
        return cfg, extra
    if not args.variant:
        raise UsageError("give --variant or --config")
    kw = {"num_classes": args.num_classes}
    if input_size is not None:
        kw["input_size"] = tuple(input_size)
    try:
        return ModelConfig.variant(args.variant, **kw), {}
    except ValueError as e:
        raise UsageError(str(e)) from None


def _require_seed(args, why: str) -> int:
    if args.seed is None:
        raise UsageError(f"--seed is required when {why}")
    return args.seed


def _read_input(source: str, seed, dtype) -> np.ndarray:
    if source.startswith("random:"):
        if seed is None:
            raise UsageError("--seed is required for random input")
        shape = parse_dims(source[len("random:"):], 4, "random input shape")
        # a separate stream from the weights so both are reproducible on their own
        return Rng(seed + 1).standard_normal(shape).astype(dtype)
    try:
        x = np.load(source, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot read input tensor {source}: {e}") from None
    if x.ndim != 4:
        raise UsageError(f"input tensor must be (N,3,H,W), got shape {x.shape}")
    return np.ascontiguousarray(x, dtype=dtype)


def write_logits_csv(logits: np.ndarray, path) -> None:
    fmt = "%.9g" if logits.dtype == np.float32 else "%.17g"
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for row in logits:
            w.writerow([fmt % v for v in row])


# subcommands ----------------------------------------------------------------

def cmd_init(args) -> int:
    seed = _require_seed(args, "initializing weights")
    size = parse_dims(args.input_size, 2, "--input-size") if args.input_size else None
    cfg, extra = _config_from_args(args, size)
    dtype = PRECISIONS[extra.get("precision", args.precision)]
    model = build_model(cfg, Rng(seed), dtype=dtype)
    ckpt.checkpoint_save(model, args.out)
    print(f"wrote {args.out}: {model.num_params()} parameters, input {cfg.input_size[0]}x{cfg.input_size[1]}")
    return EXIT_OK


def cmd_forward(args) -> int:
    dtype = PRECISIONS[args.precision]
    if args.checkpoint:
        expect = _config_from_args(args)[0] if args.config else None
        model = ckpt.checkpoint_load(args.checkpoint, expect=expect)
        if args.variant and args.variant.upper() in VARIANTS:
            if (model.cfg.channels, model.cfg.blocks) != VARIANTS[args.variant.upper()]:
                raise ckpt.CheckpointError(f"checkpoint is not variant {args.variant}")
        dtype = model.dtype
        x = _read_input(args.input, args.seed, dtype)
        if x.shape[2:] != model.cfg.input_size:
            raise UsageError(f"checkpoint is bound to {model.cfg.input_size}; input is "
                             f"{x.shape[2]}x{x.shape[3]} (use `parcv2 resize`)")
    else:
        seed = _require_seed(args, "weights are randomly initialized")
        x = _read_input(args.input, seed, dtype)
        cfg, extra = _config_from_args(args, x.shape[2:])
        dtype = PRECISIONS[extra.get("precision", args.precision)]
        x = x.astype(dtype, copy=False)
        model = build_model(cfg, Rng(seed), dtype=dtype)
    if x.shape[1] != 3:
        raise UsageError(f"input must have 3 channels, got {x.shape[1]}")
    check_finite(x, "input tensor")
    if args.fused:
        model = perf.reparam_inference_mode(model)
    logits = model_forward(model, x)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    write_logits_csv(logits, args.out)
    print(f"logits {logits.shape[0]}x{logits.shape[1]} -> {args.out}"
          f"{' (fused)' if args.fused else ''}")
    for i, row in enumerate(logits):
        top5 = np.argsort(-row, kind="stable")[:5]
        print(f"item {i}: argmax={int(top5[0])} top5={[int(t) for t in top5]}")
    return EXIT_OK


def _parse_fault(text: str):
    try:
        path, index, delta = text.split(":")
        return path, tuple(int(i) for i in index.split(",")), float(delta)
    except ValueError:
        raise UsageError("--inject-fault must be PATH:I,J[,K]:DELTA") from None


def cmd_check(args) -> int:
    names = suites.SUITES if args.suite == "all" else (args.suite,)
    fault = _parse_fault(args.inject_fault) if args.inject_fault else None
    if fault and "oracle" not in names:
        raise UsageError("--inject-fault applies to the oracle suite only")
    if fault and fault[0] not in suites.ORACLE_PATHS:
        raise UsageError(f"unknown fault path {fault[0]!r}; choose from {suites.ORACLE_PATHS}")
    results = []
    for name in names:
        res = suites.oracle_suite(fault=fault) if name == "oracle" and fault else suites.RUNNERS[name]()
        results.append(res)
        print(f"{name:8s} {'PASS' if res.passed else 'FAIL'}  {res.seconds:7.2f}s")
        if not res.passed and name == "oracle":
            for key in res.details["failed"]:
                d = res.details["paths"][key]
                print(f"  {key}: max_abs_diff={d['max_abs_diff']:.3g} at {d['argmax_location']} "
                      f"(seed {d['seed']})")
    report = {"passed": all(r.passed for r in results), "suites": [r.to_dict() for r in results]}
    Path(args.report).write_text(json.dumps(report, indent=2, default=_json_default))
    print(f"report -> {args.report}")
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def _json_default(o):
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(type(o))


def cmd_count(args) -> int:
    size = parse_dims(args.input_size, 2, "--input-size")
    cfg, _ = _config_from_args(args, size)
    rep = count_params_and_macs(cfg)
    print(f"{'module':28s} {'params':>14s} {'MACs':>16s}")
    for name, params, macs in rep.rows:
        print(f"{name:28s} {params:14,d} {macs:16,d}")
    print(f"{'total':28s} {rep.total_params:14,d} {rep.total_macs:16,d}")
    for s, n in sorted(rep.channel_bgu_per_block.items()):
        print(f"channel BGU per block, stage {s} (C={cfg.channels[s]}): {n:,d}")
    name = (args.variant or "").upper()
    if name in REFERENCE_COUNTS and size == (224, 224) and not args.config:
        ref_p, ref_m = REFERENCE_COUNTS[name]
        dp = 100 * (rep.total_params / ref_p - 1)
        dm = 100 * (rep.total_macs / ref_m - 1)
        print(f"reference {name}@224: {ref_p / 1e6:g}M params ({dp:+.1f}%), "
              f"{ref_m / 1e9:g}G MACs ({dm:+.1f}%)")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.iters < 10 or args.warmup < 3:
        raise UsageError("--iters must be >= 10 and --warmup >= 3")
    seed = _require_seed(args, "benchmark inputs are random")
    shape = parse_dims(args.shape, 4, "--shape")
    reports = []
    for op in args.op.split(","):
        path, _, kind = op.partition("-")
        if path not in perf.BENCH_PATHS or kind not in perf.BENCH_KINDS:
            raise UsageError(f"unknown op {op!r}")
        r = perf.bench(op, shape, warmup=args.warmup, iters=args.iters, rng=Rng(seed),
                       parallel=args.parallel)
        reports.append(r)
        print(f"{op:16s} {r.path:14s} median {r.median_ns / 1e6:9.3f} ms  "
              f"p10 {r.p10_ns / 1e6:9.3f}  p90 {r.p90_ns / 1e6:9.3f}  verified={r.verified}")
    perf.write_bench_csv(reports, args.csv)
    perf.write_bench_json(reports, args.json)
    print(f"wrote {args.csv}, {args.json}")
    return EXIT_OK


def cmd_resize(args) -> int:
    h, w = parse_dims(args.to, 2, "--to")
    model = ckpt.checkpoint_load(args.checkpoint)
    resized = adapt_to_resolution(model, h, w)
    ckpt.checkpoint_save(resized, args.out)
    print(f"resized {model.cfg.input_size[0]}x{model.cfg.input_size[1]} -> {h}x{w}: {args.out}")
    return EXIT_OK


# argument parsing -------------------------------------------------------------

def _model_flags(p, seed_help="seed for weights and random inputs"):
    p.add_argument("--variant", help=f"one of {', '.join(VARIANTS)}")
    p.add_argument("--config", help="JSON run config (variant or channels/blocks, input_size, ...)")
    p.add_argument("--num-classes", type=int, default=1000)
    p.add_argument("--seed", type=int, help=seed_help)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="parcv2", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a seeded, freshly initialized checkpoint")
    _model_flags(p)
    p.add_argument("--input-size", help="HxW the oversized kernels are bound to (default 224x224)")
    p.add_argument("--precision", choices=sorted(PRECISIONS), default="f32")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("forward", help="run the classifier and write logits as CSV")
    _model_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--input", required=True, help="random:NxCxHxW or a .npy file")
    p.add_argument("--fused", action="store_true", help="reparameterized inference")
    p.add_argument("--precision", choices=sorted(PRECISIONS), default="f32")
    p.add_argument("--out", default="logits.csv")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("check", help="run verification suites")
    p.add_argument("--suite", choices=(*suites.SUITES, "all"), default="all")
    p.add_argument("--report", default="check_report.json")
    p.add_argument("--inject-fault", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("count", help="parameter and MAC accounting")
    p.add_argument("--variant")
    p.add_argument("--config")
    p.add_argument("--num-classes", type=int, default=1000)
    p.add_argument("--input-size", default="224x224")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("bench", help="time a convolution path (verified before timing)")
    p.add_argument("--op", required=True,
                   help="comma list of <fast|naive|numpy>-<separable|dense>")
    p.add_argument("--shape", required=True, help="NxCxHxW")
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--seed", type=int)
    p.add_argument("--parallel", action="store_true")
    p.add_argument("--csv", default="bench.csv")
    p.add_argument("--json", default="bench.json")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("resize", help="rebind a checkpoint's oversized kernels to a new input size")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--to", required=True, help="HxW, multiples of 32")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_resize)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse: 0 for --help, 2 for bad usage
        return int(e.code or 0)
    try:
        _configure_threads()
        return args.func(args)
    except NumericError as e:
        print(f"parcv2: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except perf.VerificationError as e:
        print(f"parcv2: verification failed: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except (UsageError, ckpt.CheckpointError, ResolutionError, DimensionError, OSError) as e:
        print(f"parcv2: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
