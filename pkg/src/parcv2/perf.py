"""Accelerated depthwise convolution by lowering to blocked matrix products.

Per channel, a depthwise convolution is ``out = P @ k`` where each row of
the patch matrix ``P`` is one unrolled receptive field and ``k`` is the
flattened kernel. ``P`` is never materialized: each output tile reads its
rows straight out of the zero-padded input plane ("implicit gemm"), and the
tile's partial sums are accumulated tap by tap in row-major kernel order.
That order does not depend on tiling or threading, so results are
bit-identical across plans with the same kernel and any thread count.
"""
from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Optional, Union

import numba
import numpy as np

from . import blocks as B
from . import ops
from . import oracle
from .model import Model, _block_prefix
from .ops import Dense2DKernel, OversizedKernelPair
from .tensor import DimensionError, Rng

WORKSPACE_BYTES = 256 * 1024

# numba falls back to another threading layer when the system TBB is too old
warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)


@dataclass(frozen=True)
class PassPlan:
    kh: int
    kw: int
    tile_h: int
    tile_w: int
    patch_rows: int  # output positions per channel plane
    patch_cols: int  # taps per receptive field
    macs: int
    workspace_bytes: int


@dataclass(frozen=True)
class LoweringPlan:
    n: int
    c: int
    h: int
    w: int
    passes: tuple[PassPlan, ...]
    channel_block: int = 1
    workspace_limit: int = WORKSPACE_BYTES

    @property
    def macs(self) -> int:
        return sum(p.macs for p in self.passes)

    @property
    def workspace_bytes(self) -> int:
        return max(p.workspace_bytes for p in self.passes)

    @property
    def kernel_shapes(self) -> tuple[tuple[int, int], ...]:
        return tuple((p.kh, p.kw) for p in self.passes)


def _window_bytes(th, tw, kh, kw, itemsize):
    # input window read by one tile plus its accumulator
    return ((th + kh - 1) * (tw + kw - 1) + th * tw) * itemsize


def _plan_pass(n, c, h, w, kh, kw, budget, itemsize) -> PassPlan:
    if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"kernel extents must be odd and positive, got {kh}x{kw}")
    th, tw = h, w
    while _window_bytes(th, tw, kh, kw, itemsize) > budget and th > 1:
        th = (th + 1) // 2
    while _window_bytes(th, tw, kh, kw, itemsize) > budget and tw > 1:
        tw = (tw + 1) // 2
    ws = _window_bytes(th, tw, kh, kw, itemsize)
    if ws > budget:
        raise DimensionError(f"a {kh}x{kw} kernel cannot be tiled within {budget} bytes")
    return PassPlan(kh, kw, th, tw, h * w, kh * kw, n * c * h * w * kh * kw, ws)


def plan_lowering(c: int, h: int, w: int, kh: int, kw: int, n: int = 1,
                  budget: int = WORKSPACE_BYTES, itemsize: int = 4) -> LoweringPlan:
    if min(n, c, h, w) < 1:
        raise DimensionError(f"degenerate problem size {(n, c, h, w)}")
    return LoweringPlan(n, c, h, w, (_plan_pass(n, c, h, w, kh, kw, budget, itemsize),),
                        workspace_limit=budget)


def plan_separable(c: int, h: int, w: int, n: int = 1,
                   budget: int = WORKSPACE_BYTES, itemsize: int = 4) -> LoweringPlan:
    """Vertical (2H-1)x1 pass followed by horizontal 1x(2W-1) pass."""
    if min(n, c, h, w) < 1:
        raise DimensionError(f"degenerate problem size {(n, c, h, w)}")
    passes = (_plan_pass(n, c, h, w, 2 * h - 1, 1, budget, itemsize),
              _plan_pass(n, c, h, w, 1, 2 * w - 1, budget, itemsize))
    return LoweringPlan(n, c, h, w, passes, workspace_limit=budget)


@numba.njit(cache=True)
def _plane(xp, k, out, tile_h, tile_w, acc):
    # xp: padded (Hp, Wp) plane, k: (Kh, Kw), out: (H, W)
    h, w = out.shape
    kh, kw = k.shape
    macs = 0
    for i0 in range(0, h, tile_h):
        th = min(tile_h, h - i0)
        for j0 in range(0, w, tile_w):
            tw = min(tile_w, w - j0)
            acc[:th, :tw] = 0
            for a in range(kh):
                for t in range(kw):
                    wt = k[a, t]
                    for i in range(th):
                        src = xp[i0 + i + a, j0 + t:j0 + t + tw]
                        dst = acc[i, :tw]
                        for j in range(tw):
                            dst[j] += wt * src[j]
                    macs += th * tw
            out[i0:i0 + th, j0:j0 + tw] = acc[:th, :tw]
    return macs


@numba.njit(cache=True)
def _gemm_serial(xp, k, out, tile_h, tile_w):
    n, c = out.shape[0], out.shape[1]
    acc = np.empty((tile_h, tile_w), dtype=out.dtype)
    macs = 0
    for b in range(n):
        for ch in range(c):
            macs += _plane(xp[b, ch], k[ch], out[b, ch], tile_h, tile_w, acc)
    return macs


@numba.njit(cache=True, parallel=True)
def _gemm_parallel(xp, k, out, tile_h, tile_w):
    n, c = out.shape[0], out.shape[1]
    macs = 0
    for idx in numba.prange(n * c):
        b, ch = idx // c, idx % c
        acc = np.empty((tile_h, tile_w), dtype=out.dtype)
        macs += _plane(xp[b, ch], k[ch], out[b, ch], tile_h, tile_w, acc)
    return macs


def _run_pass(x, k, p: PassPlan, parallel: bool):
    ph, pw = (p.kh - 1) // 2, (p.kw - 1) // 2
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    xp[:, :, ph:ph + h, pw:pw + w] = x
    out = np.empty_like(x)
    k = np.ascontiguousarray(k, dtype=x.dtype)
    run = _gemm_parallel if parallel else _gemm_serial
    return out, int(run(xp, k, out, p.tile_h, p.tile_w))


KernelLike = Union[np.ndarray, Dense2DKernel, OversizedKernelPair]


def fast_dwconv(x: np.ndarray, kernel: KernelLike, plan: LoweringPlan,
                parallel: bool = False, stats: Optional[dict] = None) -> np.ndarray:
    """Depthwise 'same' correlation following ``plan``.

    ``kernel`` is a (C, Kh, Kw) array or :class:`Dense2DKernel` for a single
    pass, or an :class:`OversizedKernelPair` for the two-pass separable path.
    Executed MACs are written to ``stats['macs']`` when ``stats`` is given.
    """
    x = np.ascontiguousarray(x)
    if x.ndim != 4 or x.shape != (plan.n, plan.c, plan.h, plan.w):
        raise DimensionError(f"input {x.shape} does not match plan {(plan.n, plan.c, plan.h, plan.w)}")
    bias = None
    if isinstance(kernel, OversizedKernelPair):
        ks = [kernel.k_h[:, :, None], kernel.k_w[:, None, :]]
        bias = kernel.bias
    elif isinstance(kernel, Dense2DKernel):
        ks, bias = [kernel.k], kernel.bias
    else:
        ks = [np.asarray(kernel)]
    shapes = tuple(k.shape[1:] for k in ks)
    if shapes != plan.kernel_shapes or any(k.shape[0] != plan.c for k in ks):
        raise DimensionError(f"kernel extents {shapes} do not match plan {plan.kernel_shapes}")
    macs = 0
    out = x
    for k, p in zip(ks, plan.passes):
        out, m = _run_pass(out, k, p, parallel)
        macs += m
    if bias is not None:
        out += np.asarray(bias, dtype=out.dtype)[None, :, None, None]
    if stats is not None:
        stats["macs"] = macs
    return out


# reparameterized inference ----------------------------------------------

@lru_cache(maxsize=None)
def _cached_plan(n, c, h, w, kh, kw, itemsize):
    return plan_lowering(c, h, w, kh, kw, n=n, itemsize=itemsize)


def fused_conv(x: np.ndarray, k: Dense2DKernel) -> np.ndarray:
    n, c, h, w = x.shape
    plan = _cached_plan(n, c, h, w, k.k.shape[1], k.k.shape[2], x.dtype.itemsize)
    return fast_dwconv(x, k, plan)


def reparam_inference_mode(m: Model) -> Model:
    """Fold every block's local 7x7 and oversized pair into one dense
    depthwise kernel executed through :func:`fast_dwconv`."""
    fused = {}
    for s, nb in enumerate(m.cfg.blocks):
        for b in range(nb):
            fused[_block_prefix(s, b)] = B.fused_branch_kernel(m.block_params(s, b).spatial)
    return Model(m.cfg, m.params, fused, fused_conv)


# benchmarking -------------------------------------------------------------

BENCH_COLUMNS = ["label", "N", "C", "H", "W", "kh", "kw", "path",
                 "median_ns", "p10_ns", "p90_ns", "verified"]
BENCH_PATHS = ("fast", "naive", "numpy")
BENCH_KINDS = ("separable", "dense")


@dataclass(frozen=True)
class BenchReport:
    label: str
    N: int
    C: int
    H: int
    W: int
    kh: int
    kw: int
    path: str
    median_ns: int
    p10_ns: int
    p90_ns: int
    verified: bool
    warmup: int = 0
    iters: int = 0

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in BENCH_COLUMNS}


class VerificationError(RuntimeError):
    pass


def bench(op: str, shape, warmup: int = 3, iters: int = 10, rng: Optional[Rng] = None,
          parallel: bool = False, tol: float = 1e-4) -> BenchReport:
    """Time one convolution path. ``op`` is ``"<path>-<kind>"`` with path in
    fast/naive/numpy and kind in separable/dense (dense means the fused
    (2H-1)x(2W-1) kernel). Output is checked against the direct-sum oracle
    before any timing."""
    if iters < 10 or warmup < 3:
        raise ValueError("bench needs iters >= 10 and warmup >= 3")
    path, _, kind = op.partition("-")
    if path not in BENCH_PATHS or kind not in BENCH_KINDS:
        raise ValueError(f"unknown op {op!r}")
    rng = rng or Rng(0)
    n, c, h, w = shape
    x = rng.standard_normal(shape).astype(np.float32)
    pair = OversizedKernelPair(
        (rng.signed_uniform((c, 2 * h - 1)) / math.sqrt(2 * h - 1)).astype(np.float32),
        (rng.signed_uniform((c, 2 * w - 1)) / math.sqrt(2 * w - 1)).astype(np.float32),
    )
    if kind == "separable":
        plan = plan_separable(c, h, w, n=n)
        fns = {
            "fast": lambda: fast_dwconv(x, pair, plan, parallel=parallel),
            "naive": lambda: oracle.oversized_oracle(x, pair.k_h, pair.k_w),
            "numpy": lambda: ops.parc_oversized(x, pair),
        }
        reference = lambda: oracle.oversized_oracle(x, pair.k_h, pair.k_w)  # noqa: E731
    else:
        dense = ops.compose_2d(pair)
        plan = plan_lowering(c, h, w, 2 * h - 1, 2 * w - 1, n=n)
        fns = {
            "fast": lambda: fast_dwconv(x, dense, plan, parallel=parallel),
            "naive": lambda: oracle.naive_conv_oracle(x, dense.k, (h - 1, h - 1, w - 1, w - 1)),
            "numpy": lambda: ops.dense_dwconv2d(x, dense),
        }
        reference = fns["naive"]
    fn = fns[path]
    out = fn()
    # the naive path is the oracle itself; cross-check it against the fast path
    ref = fns["fast"]() if path == "naive" else reference()
    report = oracle.check_equivalence(out, ref, tol)
    if not report.passed:
        raise VerificationError(
            f"{op} output differs from reference by {report.max_abs_diff:.3g} "
            f"at {report.argmax_location}; timing aborted"
        )
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(iters):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    p10, med, p90 = np.percentile(times, [10, 50, 90])
    kh, kw = 2 * h - 1, 2 * w - 1
    return BenchReport(op, n, c, h, w, kh, kw, path + ("-parallel" if parallel and path == "fast" else ""),
                       int(med), int(p10), int(p90), True, warmup, iters)


def write_bench_csv(reports, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        for r in reports:
            writer.writerow(r.row())


def write_bench_json(reports, path) -> None:
    with open(path, "w") as f:
        json.dump([r.row() for r in reports], f, indent=2)
