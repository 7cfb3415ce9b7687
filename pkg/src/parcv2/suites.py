"""Seeded verification suites behind ``parcv2 check``.

Each suite returns a :class:`SuiteResult` whose ``details`` are plain JSON
types, so the CLI can dump them straight into its report file.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import blocks as B
from . import ops, oracle, perf
from .model import ModelConfig, build_model, model_forward
from .ops import Dense2DKernel, LocalKernel7, OversizedKernelPair
from .tensor import (
    PointwiseParams,
    Rng,
    channel_layernorm,
    channel_layernorm_vjp,
    gelu,
    gelu_vjp,
    global_avg_pool,
    global_avg_pool_vjp,
    pointwise_conv,
    pointwise_vjp,
)

SUITES = ("oracle", "grad", "commute", "reparam", "shift", "rf")

TOL_F32 = 1e-4
TOL_F64 = 1e-10


@dataclass
class SuiteResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"suite": self.name, "pass": self.passed, "seconds": round(self.seconds, 3),
                "details": self.details}


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# random instances -----------------------------------------------------------

def random_pair(rng: Rng, c: int, h: int, w: int, dtype=np.float32, bias=False,
                low=0.1, high=1.0) -> OversizedKernelPair:
    kh = rng.signed_uniform((c, 2 * h - 1), low, high) / math.sqrt(2 * h - 1)
    kw = rng.signed_uniform((c, 2 * w - 1), low, high) / math.sqrt(2 * w - 1)
    b = rng.standard_normal(c).astype(dtype) if bias else None
    return OversizedKernelPair(kh.astype(dtype), kw.astype(dtype), b)


def random_local(rng: Rng, c: int, dtype=np.float32, bias=False) -> LocalKernel7:
    k = rng.signed_uniform((c, 7, 7)) / 7.0
    b = rng.standard_normal(c).astype(dtype) if bias else None
    return LocalKernel7(k.astype(dtype), b)


def random_pw(rng: Rng, c_out: int, c_in: int, dtype=np.float32) -> PointwiseParams:
    w = rng.standard_normal((c_out, c_in)) / math.sqrt(c_in)
    return PointwiseParams(w.astype(dtype), (0.1 * rng.standard_normal(c_out)).astype(dtype))


def random_spatial(rng: Rng, c: int, h: int, w: int, dtype=np.float32,
                   branch_projection=False) -> B.SpatialBGUParams:
    return B.SpatialBGUParams(
        pw_in=random_pw(rng, c, c, dtype),
        local=random_local(rng, c, dtype, bias=True),
        oversized=random_pair(rng, c, h, w, dtype, bias=True),
        pw_gate=random_pw(rng, c, c, dtype),
        pw_out=random_pw(rng, c, c, dtype),
        pw_mid=random_pw(rng, c, c, dtype) if branch_projection else None,
    )


def random_channel(rng: Rng, c: int, alpha_tilde=2.5, dtype=np.float32) -> B.ChannelBGUParams:
    hid = B.hidden_width(c, alpha_tilde)
    return B.ChannelBGUParams(random_pw(rng, hid, c, dtype), random_pw(rng, hid, c, dtype),
                              random_pw(rng, c, hid, dtype), alpha_tilde)


def random_block(rng: Rng, c: int, h: int, w: int, dtype=np.float32) -> B.BlockParams:
    def vec(scale, offset):
        return (offset + scale * rng.standard_normal(c)).astype(dtype)
    return B.BlockParams(
        norm1=(vec(0.2, 1.0), vec(0.2, 0.0)),
        norm2=(vec(0.2, 1.0), vec(0.2, 0.0)),
        spatial=random_spatial(rng, c, h, w, dtype),
        channel=random_channel(rng, c, dtype=dtype),
        res_scale1=vec(0.2, 1.0),
        res_scale2=vec(0.2, 1.0),
    )


def random_shape(rng: Rng, max_shape=(2, 8, 16, 16)) -> tuple[int, int, int, int]:
    return tuple(int(rng.uniform((), 1, m + 1)) for m in max_shape)


# oracle ---------------------------------------------------------------------

ORACLE_PATHS = ("parc_oh", "parc_ow", "parc_oversized", "dwconv7x7", "dense2d", "fused",
                "fast_separable", "fast_fused", "fast_dense")


def _oracle_case(seed: int, dtype, fault: Optional[tuple[str, tuple, float]] = None):
    """Run every production path once against the oracle.

    ``fault`` = (path, kernel index, delta) perturbs one tap of the kernel
    handed to that production path only, for fault-injection checks. The
    index is clamped to the kernel's extent since kernel sizes vary per case.
    """
    rng = Rng(seed)
    n, c, h, w = random_shape(rng)
    x = rng.standard_normal((n, c, h, w)).astype(dtype)
    pair = random_pair(rng, c, h, w, dtype, bias=True)
    local = random_local(rng, c, dtype, bias=True)
    kd = rng.signed_uniform((c, 2 * int(rng.uniform((), 0, 8)) + 1, 2 * int(rng.uniform((), 0, 8)) + 1))
    dense = Dense2DKernel((kd / math.sqrt(kd[0].size)).astype(dtype))

    def faulty(path, arr):
        if fault is None or fault[0] != path:
            return arr
        arr = arr.copy()
        arr[tuple(min(i, s - 1) for i, s in zip(fault[1], arr.shape))] += fault[2]
        return arr

    ph, pw = dense.padding
    fused = B.fused_branch_kernel(B.SpatialBGUParams(
        PointwiseParams.identity(c, dtype), local, pair,
        PointwiseParams.identity(c, dtype), PointwiseParams.identity(c, dtype)))
    fp = perf.plan_lowering(c, h, w, *fused.k.shape[1:], n=n)
    sp = perf.plan_separable(c, h, w, n=n)
    dp = perf.plan_lowering(c, h, w, *dense.k.shape[1:], n=n)
    bias = pair.bias.astype(np.float64)[None, :, None, None]
    pairs = {
        "parc_oh": (ops.parc_oh(x, OversizedKernelPair(faulty("parc_oh", pair.k_h), pair.k_w)),
                    oracle.naive_conv_oracle(x, pair.k_h, (h - 1, h - 1, 0, 0))),
        "parc_ow": (ops.parc_ow(x, OversizedKernelPair(pair.k_h, faulty("parc_ow", pair.k_w))),
                    oracle.naive_conv_oracle(x, pair.k_w[:, None, :], (0, 0, w - 1, w - 1))),
        "parc_oversized": (ops.parc_oversized(x, pair),
                           oracle.oversized_oracle(x, pair.k_h, pair.k_w, pair.bias)),
        "dwconv7x7": (ops.dwconv7x7(x, LocalKernel7(faulty("dwconv7x7", local.k), local.bias)),
                      oracle.naive_conv_oracle(x, local.k, (3, 3, 3, 3))
                      + local.bias.astype(np.float64)[None, :, None, None]),
        "dense2d": (ops.dense_dwconv2d(x, Dense2DKernel(faulty("dense2d", dense.k))),
                    oracle.naive_conv_oracle(x, dense.k, (ph, ph, pw, pw))),
        "fused": (ops.dense_dwconv2d(x, Dense2DKernel(faulty("fused", fused.k), fused.bias)),
                  oracle.oversized_oracle(x, pair.k_h, pair.k_w, pair.bias)
                  + oracle.naive_conv_oracle(x, local.k, (3, 3, 3, 3))
                  + local.bias.astype(np.float64)[None, :, None, None]),
        "fast_separable": (perf.fast_dwconv(x, OversizedKernelPair(
                               faulty("fast_separable", pair.k_h), pair.k_w, pair.bias), sp),
                           oracle.oversized_oracle(x, pair.k_h, pair.k_w) + bias),
        "fast_fused": (perf.fast_dwconv(x, Dense2DKernel(faulty("fast_fused", fused.k), fused.bias), fp),
                       oracle.oversized_oracle(x, pair.k_h, pair.k_w, pair.bias)
                       + oracle.naive_conv_oracle(x, local.k, (3, 3, 3, 3))
                       + local.bias.astype(np.float64)[None, :, None, None]),
        "fast_dense": (perf.fast_dwconv(x, Dense2DKernel(faulty("fast_dense", dense.k)), dp),
                       oracle.naive_conv_oracle(x, dense.k, (ph, ph, pw, pw))),
    }
    tol = TOL_F32 if dtype == np.float32 else TOL_F64
    return (n, c, h, w), {k: oracle.check_equivalence(a, b, tol) for k, (a, b) in pairs.items()}


@_timed
def oracle_suite(cases: int = 100, f64_cases: int = 20, base_seed: int = 1000,
                 fault: Optional[tuple[str, tuple, float]] = None) -> SuiteResult:
    """Every production convolution path against the direct-sum oracle."""
    details: dict = {"cases_f32": cases, "cases_f64": f64_cases, "paths": {}}
    worst: dict[str, dict] = {}
    runs = [(base_seed + i, np.float32) for i in range(cases)]
    runs += [(base_seed + cases + i, np.float64) for i in range(f64_cases)]
    for seed, dtype in runs:
        shape, reports = _oracle_case(seed, dtype, fault)
        prec = "f32" if dtype == np.float32 else "f64"
        for path, rep in reports.items():
            key = f"{path}/{prec}"
            cur = worst.get(key)
            if cur is None or rep.max_abs_diff > cur["max_abs_diff"] or not rep.passed and cur["pass"]:
                worst[key] = {**rep.to_dict(), "seed": seed, "shape": list(shape)}
    details["paths"] = worst
    details["seeds"] = [base_seed, base_seed + cases + f64_cases - 1]
    failed = [k for k, v in worst.items() if not v["pass"]]
    details["failed"] = failed
    return SuiteResult("oracle", not failed, details)


# gradients ------------------------------------------------------------------

GRAD_TOL = 1e-6


def _grad_check(forward: Callable, vjp: Callable, inputs: dict, rng: Rng) -> float:
    """Max relative error between ``vjp`` and finite differences of
    ``sum(cot * forward(**inputs))`` over every entry of ``inputs``."""
    out = forward(**inputs)
    cot = rng.standard_normal(out.shape)
    analytic = vjp(cot, **inputs)
    worst = 0.0
    for name, value in inputs.items():
        def f(v, name=name):
            return forward(**{**inputs, name: v})
        fd = oracle.finite_diff_vjp(f, value, cot, eps=FD_EPS, richardson=True)
        worst = max(worst, oracle.max_rel_error(analytic[name], fd))
    return worst


def _flat_block_inputs(p: B.BlockParams) -> dict:
    s, ch = p.spatial, p.channel
    return {
        "norm1_w": p.norm1[0], "norm1_b": p.norm1[1], "norm2_w": p.norm2[0], "norm2_b": p.norm2[1],
        "pw_in_w": s.pw_in.weight, "pw_in_b": s.pw_in.bias,
        "local_w": s.local.k, "local_b": s.local.bias,
        "k_h": s.oversized.k_h, "k_w": s.oversized.k_w, "ov_b": s.oversized.bias,
        "gate_w": s.pw_gate.weight, "gate_b": s.pw_gate.bias,
        "out_w": s.pw_out.weight, "out_b": s.pw_out.bias,
        "w1_w": ch.w1.weight, "w1_b": ch.w1.bias, "w2_w": ch.w2.weight, "w2_b": ch.w2.bias,
        "w3_w": ch.w3.weight, "w3_b": ch.w3.bias,
        "rs1": p.res_scale1, "rs2": p.res_scale2,
    }


def _spatial_from(d) -> B.SpatialBGUParams:
    return B.SpatialBGUParams(
        PointwiseParams(d["pw_in_w"], d["pw_in_b"]),
        LocalKernel7(d["local_w"], d["local_b"]),
        OversizedKernelPair(d["k_h"], d["k_w"], d["ov_b"]),
        PointwiseParams(d["gate_w"], d["gate_b"]),
        PointwiseParams(d["out_w"], d["out_b"]),
    )


def _channel_from(d) -> B.ChannelBGUParams:
    return B.ChannelBGUParams(PointwiseParams(d["w1_w"], d["w1_b"]),
                              PointwiseParams(d["w2_w"], d["w2_b"]),
                              PointwiseParams(d["w3_w"], d["w3_b"]))


def _block_from(d) -> B.BlockParams:
    return B.BlockParams((d["norm1_w"], d["norm1_b"]), (d["norm2_w"], d["norm2_b"]),
                         _spatial_from(d), _channel_from(d), d["rs1"], d["rs2"])


_SPATIAL_MAP = {"pw_in.weight": "pw_in_w", "pw_in.bias": "pw_in_b", "local.weight": "local_w",
                "local.bias": "local_b", "oversized.k_h": "k_h", "oversized.k_w": "k_w",
                "oversized.bias": "ov_b", "pw_gate.weight": "gate_w", "pw_gate.bias": "gate_b",
                "pw_out.weight": "out_w", "pw_out.bias": "out_b"}
_CHANNEL_MAP = {"w1.weight": "w1_w", "w1.bias": "w1_b", "w2.weight": "w2_w", "w2.bias": "w2_b",
                "w3.weight": "w3_w", "w3.bias": "w3_b"}
_BLOCK_MAP = {"norm1.weight": "norm1_w", "norm1.bias": "norm1_b", "norm2.weight": "norm2_w",
              "norm2.bias": "norm2_b", "res_scale1": "rs1", "res_scale2": "rs2",
              **{f"spatial.{k}": v for k, v in _SPATIAL_MAP.items()},
              **{f"channel.{k}": v for k, v in _CHANNEL_MAP.items()}}


def _rename(grads: dict, mapping: dict) -> dict:
    return {mapping[k]: v for k, v in grads.items()}


def grad_op_cases(rng: Rng) -> dict[str, tuple[Callable, Callable, dict]]:
    """One random f64 instance per differentiable op: (forward, vjp, inputs)."""
    f8 = np.float64
    n, c = int(rng.uniform((), 1, 3)), int(rng.uniform((), 1, 4))
    h, w = int(rng.uniform((), 1, 6)), int(rng.uniform((), 1, 5))
    x = rng.standard_normal((n, c, h, w))
    pair = random_pair(rng, c, h, w, f8, bias=True)
    local = random_local(rng, c, f8, bias=True)
    kd = rng.signed_uniform((c, 2 * int(rng.uniform((), 0, 3)) + 1, 2 * int(rng.uniform((), 0, 3)) + 1))
    pw = random_pw(rng, int(rng.uniform((), 1, 4)), c, f8)
    # channel layer norm over one or two channels is constant up to the
    # stabilizer, leaving gradients below finite-difference resolution
    cl = int(rng.uniform((), 3, 7))
    xl = rng.standard_normal((n, cl, h, w))
    gamma, beta = 1 + 0.2 * rng.standard_normal(cl), 0.2 * rng.standard_normal(cl)
    # block-level ops use a fixed small width to bound the finite-difference cost
    cb, hb, wb = 4, int(rng.uniform((), 2, 5)), int(rng.uniform((), 2, 5))
    xb = rng.standard_normal((1, cb, hb, wb))
    blk = random_block(rng, cb, hb, wb, f8)

    cases = {
        "pointwise": (
            lambda x, wt, b: pointwise_conv(x, PointwiseParams(wt, b)),
            lambda g, x, wt, b: dict(zip(("x", "wt", "b"), pointwise_vjp(g, x, PointwiseParams(wt, b)))),
            {"x": x, "wt": pw.weight, "b": pw.bias}),
        "gelu": (lambda x: gelu(x), lambda g, x: {"x": gelu_vjp(g, x)}, {"x": 2 * x}),
        "channel_layernorm": (
            lambda x, gm, bt: channel_layernorm(x, gm, bt),
            lambda g, x, gm, bt: dict(zip(("x", "gm", "bt"), channel_layernorm_vjp(g, x, gm))),
            {"x": xl, "gm": gamma, "bt": beta}),
        "global_avg_pool": (lambda x: global_avg_pool(x),
                            lambda g, x: {"x": global_avg_pool_vjp(g, x.shape)}, {"x": x}),
        "parc_oh": (
            lambda x, k: ops.parc_oh(x, OversizedKernelPair(k, pair.k_w)),
            lambda g, x, k: dict(zip(("x", "k"), ops.parc_oh_vjp(g, x, OversizedKernelPair(k, pair.k_w)))),
            {"x": x, "k": pair.k_h}),
        "parc_ow": (
            lambda x, k, b: ops.parc_ow(x, OversizedKernelPair(pair.k_h, k, b)),
            lambda g, x, k, b: dict(zip(("x", "k", "b"),
                                        ops.parc_ow_vjp(g, x, OversizedKernelPair(pair.k_h, k, b)))),
            {"x": x, "k": pair.k_w, "b": pair.bias}),
        "parc_oversized": (
            lambda x, kh, kw, b: ops.parc_oversized(x, OversizedKernelPair(kh, kw, b)),
            lambda g, x, kh, kw, b: dict(zip(("x", "kh", "kw", "b"), ops.parc_oversized_vjp(
                g, x, OversizedKernelPair(kh, kw, b)))),
            {"x": x, "kh": pair.k_h, "kw": pair.k_w, "b": pair.bias}),
        "dwconv7x7": (
            lambda x, k, b: ops.dwconv7x7(x, LocalKernel7(k, b)),
            lambda g, x, k, b: dict(zip(("x", "k", "b"), ops.dwconv7x7_vjp(g, x, LocalKernel7(k, b)))),
            {"x": x, "k": local.k, "b": local.bias}),
        "dense2d": (
            lambda x, k: ops.dense_dwconv2d(x, Dense2DKernel(k)),
            lambda g, x, k: dict(zip(("x", "k"), ops.dense_dwconv2d_vjp(g, x, Dense2DKernel(k))[:2])),
            {"x": x, "k": kd}),
        "spatial_bgu": (
            lambda x, **d: B.spatial_bgu(x, _spatial_from(d)),
            lambda g, x, **d: _with_x(B.spatial_bgu_vjp(g, x, _spatial_from(d)), _SPATIAL_MAP),
            {"x": xb, **{k: v for k, v in _flat_block_inputs(blk).items() if k in _SPATIAL_MAP.values()}}),
        "channel_bgu": (
            lambda x, **d: B.channel_bgu(x, _channel_from(d)),
            lambda g, x, **d: _with_x(B.channel_bgu_vjp(g, x, _channel_from(d)), _CHANNEL_MAP),
            {"x": xb, **{k: v for k, v in _flat_block_inputs(blk).items() if k in _CHANNEL_MAP.values()}}),
        "parcv2_block": (
            lambda x, **d: B.parcv2_block(x, _block_from(d)),
            lambda g, x, **d: _with_x(B.parcv2_block_vjp(g, x, _block_from(d)), _BLOCK_MAP),
            {"x": xb, **_flat_block_inputs(blk)}),
    }
    return cases


def _with_x(res, mapping):
    gx, grads = res
    return {"x": gx, **_rename(grads, mapping)}


FD_EPS = 1e-4  # Richardson pair 1e-4 / 5e-5

GRAD_OPS = ("pointwise", "gelu", "channel_layernorm", "global_avg_pool", "parc_oh", "parc_ow",
            "parc_oversized", "dwconv7x7", "dense2d", "spatial_bgu", "channel_bgu", "parcv2_block")


@_timed
def grad_suite(cases: int = 20, base_seed: int = 2000, ops_subset=None) -> SuiteResult:
    """Analytic VJPs against central finite differences (float64)."""
    names = ops_subset or GRAD_OPS
    worst = {k: 0.0 for k in names}
    for i in range(cases):
        rng = Rng(base_seed + i)
        table = grad_op_cases(rng)
        for name in names:
            fwd, vjp, inputs = table[name]
            worst[name] = max(worst[name], _grad_check(fwd, vjp, inputs, rng))
    details = {"cases_per_op": cases, "tolerance": GRAD_TOL, "fd_steps": [FD_EPS, FD_EPS / 2],
               "max_rel_error": worst,
               "seeds": [base_seed, base_seed + cases - 1]}
    return SuiteResult("grad", all(v <= GRAD_TOL for v in worst.values()), details)


# commutativity ----------------------------------------------------------------

@_timed
def commute_suite(cases: int = 100, base_seed: int = 3000,
                  max_shape=(2, 8, 16, 16)) -> SuiteResult:
    """Vertical-then-horizontal vs horizontal-then-vertical oversized passes."""
    worst = {"f32": 0.0, "f64": 0.0}
    for i in range(cases):
        for dtype, key in ((np.float32, "f32"), (np.float64, "f64")):
            rng = Rng(base_seed + i)
            n, c, h, w = random_shape(rng, max_shape)
            x = rng.standard_normal((n, c, h, w)).astype(dtype)
            pair = random_pair(rng, c, h, w, dtype, bias=True)
            d = np.max(np.abs(ops.parc_oversized(x, pair) - ops.parc_oversized_wh(x, pair)))
            worst[key] = max(worst[key], float(d))
    tol = {"f32": 1e-5, "f64": 1e-12}
    return SuiteResult("commute", all(worst[k] <= tol[k] for k in worst),
                       {"cases": cases, "max_shape": list(max_shape), "max_abs_diff": worst,
                        "tolerance": tol})


# reparameterization -------------------------------------------------------------

@_timed
def reparam_suite(cases: int = 30, base_seed: int = 4000, model_inputs: int = 32,
                  model_variant: str = "XT", model_size: int = 64) -> SuiteResult:
    """Separable == rank-1 dense; local+oversized == fused kernel; fused model
    logits == unfused logits."""
    sep, branch = 0.0, 0.0
    for i in range(cases):
        rng = Rng(base_seed + i)
        n, c, h, w = random_shape(rng, (2, 8, 16, 16))
        h, w = max(h, 4), max(w, 4)
        x = rng.standard_normal((n, c, h, w)).astype(np.float32)
        pair = random_pair(rng, c, h, w, bias=True)
        sep = max(sep, float(np.max(np.abs(
            ops.parc_oversized(x, pair) - ops.dense_dwconv2d(x, ops.compose_2d(pair))))))
        sp = random_spatial(rng, c, h, w, branch_projection=bool(i % 2))
        fused = B.fused_branch_kernel(sp)
        ref = B.parc_branch(x, sp)
        branch = max(branch, float(np.max(np.abs(ref - B.parc_branch_fused(x, sp, fused)))),
                     float(np.max(np.abs(ref - B.parc_branch_fused(x, sp, fused, perf.fused_conv)))))

    cfg = ModelConfig.variant(model_variant, input_size=(model_size, model_size))
    model = build_model(cfg, Rng(base_seed))
    fused_model = perf.reparam_inference_mode(model)
    xs = Rng(base_seed + 1).standard_normal((model_inputs, 3, model_size, model_size)).astype(np.float32)
    a = np.concatenate([model_forward(model, xs[i:i + 8]) for i in range(0, model_inputs, 8)])
    b = np.concatenate([model_forward(fused_model, xs[i:i + 8]) for i in range(0, model_inputs, 8)])
    logit_diff = float(np.max(np.abs(a - b)))
    argmax_same = int(np.sum(a.argmax(1) == b.argmax(1)))
    details = {
        "separable_vs_dense_max_abs": sep,
        "branch_vs_fused_max_abs": branch,
        "model": f"{model_variant}@{model_size}",
        "logits_max_abs_diff": logit_diff,
        "argmax_preserved": f"{argmax_same}/{model_inputs}",
        "tolerance": {"kernel": TOL_F32, "logits": 1e-3},
    }
    ok = sep <= TOL_F32 and branch <= TOL_F32 and logit_diff <= 1e-3 and argmax_same == model_inputs
    return SuiteResult("reparam", ok, details)


# shift equivariance --------------------------------------------------------------

def _cyclic_deviation(f, x) -> float:
    base = f(x)
    worst = 0.0
    for di in range(x.shape[2]):
        for dj in range(x.shape[3]):
            shifted = f(np.roll(x, (di, dj), axis=(2, 3)))
            worst = max(worst, float(np.max(np.abs(shifted - np.roll(base, (di, dj), axis=(2, 3))))))
    return worst


@_timed
def shift_suite(cases: int = 10, base_seed: int = 5000, shape=(1, 2, 6, 6)) -> SuiteResult:
    """Circular reference is cyclic-shift-equivariant; oversized conv is not."""
    n, c, h, w = shape
    circ, over = 0.0, math.inf
    for i in range(cases):
        rng = Rng(base_seed + i)
        x = rng.standard_normal(shape)
        kh, kw = rng.signed_uniform((c, h)), rng.signed_uniform((c, w))
        circ = max(circ, _cyclic_deviation(lambda t: oracle.circular_conv_reference(t, kh, kw), x))
        pair = random_pair(rng, c, h, w, np.float64)
        over = min(over, _cyclic_deviation(lambda t: ops.parc_oversized(t, pair), x))
    details = {"circular_max_deviation": circ, "oversized_min_deviation": over,
               "tolerance": {"circular_at_most": 1e-6, "oversized_at_least": 1e-3}}
    return SuiteResult("shift", circ <= 1e-6 and over > 1e-3, details)


# receptive field -------------------------------------------------------------------

@_timed
def rf_suite(seed: int = 6000) -> SuiteResult:
    rng = Rng(seed)
    pair = random_pair(rng, 1, 5, 4, np.float64)
    zeros = np.zeros((1, 1, 5, 4))
    dep = oracle.receptive_field_probe(lambda g: ops.parc_oversized_vjp(g, zeros, pair)[0], (1, 1, 5, 4))

    local = random_local(rng, 1, np.float64)
    z20 = np.zeros((1, 1, 20, 20))
    dep7 = oracle.receptive_field_probe(lambda g: ops.dwconv7x7_vjp(g, z20, local)[0], (1, 1, 20, 20))
    ii, jj = np.divmod(np.arange(400), 20)
    cheb = np.maximum(np.abs(ii[:, None] - ii[None, :]), np.abs(jj[:, None] - jj[None, :]))
    support_ok = bool(np.all(dep7 == (cheb <= 3)))

    delta = OversizedKernelPair.delta(1, 5, 4, np.float64)
    dep_delta = oracle.receptive_field_probe(
        lambda g: ops.parc_oversized_vjp(g, zeros, delta)[0], (1, 1, 5, 4))
    details = {"oversized_all_true": bool(dep.all()),
               "dwconv7x7_support_bounded": support_ok,
               "delta_diagonal_only": bool(np.array_equal(dep_delta, np.eye(20, dtype=bool)))}
    return SuiteResult("rf", all(details.values()), details)


RUNNERS = {
    "oracle": oracle_suite,
    "grad": grad_suite,
    "commute": commute_suite,
    "reparam": reparam_suite,
    "shift": shift_suite,
    "rf": rf_suite,
}


def run_suites(names) -> list[SuiteResult]:
    if "all" in names:
        names = SUITES
    return [RUNNERS[n]() for n in names]
