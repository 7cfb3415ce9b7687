import csv
import json

import numpy as np
import pytest

from parcv2 import oracle, perf
from parcv2.model import ModelConfig, build_model, model_forward
from parcv2.ops import Dense2DKernel, OversizedKernelPair, compose_2d
from parcv2.suites import random_pair
from parcv2.tensor import DimensionError, Rng

STAGE_SHAPES = sorted({(c, h) for name in ("XT", "T") for size in (224, 64)
                       for c, (h, _) in zip(ModelConfig.variant(name).channels,
                                            ModelConfig.variant(name, input_size=(size, size)).stage_sizes)})


class TestPlan:
    def test_pointwise_degenerate(self):
        plan = perf.plan_lowering(3, 5, 4, 1, 1)
        assert plan.kernel_shapes == ((1, 1),)
        assert plan.passes[0].patch_cols == 1
        assert plan.macs == 3 * 5 * 4

    def test_dense_macs_closed_form(self):
        assert perf.plan_lowering(64, 56, 56, 111, 111).macs == 64 * 56 * 56 * 111 * 111

    def test_separable_ratio(self):
        dense = perf.plan_lowering(64, 56, 56, 111, 111)
        sep = perf.plan_separable(64, 56, 56)
        assert sep.macs == 64 * 56 * 56 * (111 + 111)
        assert dense.macs * 2 == sep.macs * 111  # exactly 55.5x
        assert dense.macs / sep.macs == 55.5

    def test_workspace_budget(self):
        plan = perf.plan_lowering(64, 56, 56, 111, 111)
        assert plan.workspace_bytes <= perf.WORKSPACE_BYTES
        small = perf.plan_lowering(1, 56, 56, 111, 111, budget=64 * 1024)
        assert small.workspace_bytes <= 64 * 1024
        assert small.passes[0].tile_h < 56

    @pytest.mark.parametrize("c,h", STAGE_SHAPES)
    def test_fused_costs_more_than_separable(self, c, h):
        dense = perf.plan_lowering(c, h, h, 2 * h - 1, 2 * h - 1)
        assert dense.macs > perf.plan_separable(c, h, h).macs

    def test_bad_kernel(self):
        with pytest.raises(DimensionError):
            perf.plan_lowering(1, 4, 4, 2, 3)


class TestFastDwconv:
    def test_delta_identity(self, rng):
        x = rng.standard_normal((2, 3, 6, 5)).astype(np.float32)
        plan = perf.plan_separable(3, 6, 5, n=2)
        assert perf.fast_dwconv(x, OversizedKernelPair.delta(3, 6, 5), plan).tobytes() == x.tobytes()

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_oracle(self, seed):
        rng = Rng(seed)
        n, c, h, w = (int(rng.uniform((), 1, m + 1)) for m in (2, 8, 16, 16))
        x = rng.standard_normal((n, c, h, w)).astype(np.float32)
        kh, kw = 2 * int(rng.uniform((), 0, 8)) + 1, 2 * int(rng.uniform((), 0, 8)) + 1
        k = (rng.signed_uniform((c, kh, kw)) / np.sqrt(kh * kw)).astype(np.float32)
        out = perf.fast_dwconv(x, k, perf.plan_lowering(c, h, w, kh, kw, n=n))
        ref = oracle.naive_conv_oracle(x, k, ((kh - 1) // 2,) * 2 + ((kw - 1) // 2,) * 2)
        assert oracle.check_equivalence(out, ref, 1e-4).passed

    def test_separable_equals_dense(self, rng):
        x = rng.standard_normal((1, 4, 12, 10)).astype(np.float32)
        pair = random_pair(rng, 4, 12, 10, np.float32, bias=True)
        sep = perf.fast_dwconv(x, pair, perf.plan_separable(4, 12, 10))
        dense = perf.fast_dwconv(x, compose_2d(pair), perf.plan_lowering(4, 12, 10, 23, 19))
        assert np.max(np.abs(sep - dense)) <= 1e-4

    @pytest.mark.parametrize("c,h", STAGE_SHAPES)
    def test_stage_shapes(self, c, h):
        rng = Rng(c * 1000 + h)
        x = rng.standard_normal((1, c, h, h)).astype(np.float32)
        pair = random_pair(rng, c, h, h, np.float32)
        out = perf.fast_dwconv(x, pair, perf.plan_separable(c, h, h))
        ref = oracle.oversized_oracle(x, pair.k_h, pair.k_w)
        assert oracle.check_equivalence(out, ref, 1e-4).passed
        # the dense fused path on a channel slice of the same plane size
        d = compose_2d(OversizedKernelPair(pair.k_h[:2], pair.k_w[:2]))
        out_d = perf.fast_dwconv(x[:, :2], d, perf.plan_lowering(2, h, h, 2 * h - 1, 2 * h - 1))
        assert oracle.check_equivalence(out_d, ref[:, :2], 1e-4).passed

    def test_instrumented_macs(self, rng):
        x = rng.standard_normal((2, 3, 9, 7)).astype(np.float32)
        for plan, k in ((perf.plan_separable(3, 9, 7, n=2), random_pair(rng, 3, 9, 7)),
                        (perf.plan_lowering(3, 9, 7, 5, 3, n=2), rng.standard_normal((3, 5, 3)))):
            stats = {}
            perf.fast_dwconv(x, k, plan, stats=stats)
            assert stats["macs"] == plan.macs

    def test_deterministic_across_threading(self, rng):
        x = rng.standard_normal((2, 5, 14, 14)).astype(np.float32)
        pair = random_pair(rng, 5, 14, 14)
        plan = perf.plan_separable(5, 14, 14, n=2)
        a = perf.fast_dwconv(x, pair, plan)
        b = perf.fast_dwconv(x, pair, plan)
        c = perf.fast_dwconv(x, pair, plan, parallel=True)
        assert a.tobytes() == b.tobytes() == c.tobytes()

    def test_plan_mismatch(self, rng):
        plan = perf.plan_separable(2, 4, 4)
        with pytest.raises(DimensionError):
            perf.fast_dwconv(np.zeros((1, 2, 5, 4), np.float32), OversizedKernelPair.delta(2, 4, 4), plan)
        with pytest.raises(DimensionError):
            perf.fast_dwconv(np.zeros((1, 2, 4, 4), np.float32), Dense2DKernel(np.zeros((2, 3, 3))), plan)


class TestBench:
    def test_zero_iters(self):
        with pytest.raises(ValueError):
            perf.bench("fast-separable", (1, 2, 8, 8), iters=0)

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            perf.bench("gpu-separable", (1, 2, 8, 8))

    def test_report_schema(self, tmp_path):
        reports = [perf.bench(op, (1, 4, 10, 10), rng=Rng(1))
                   for op in ("fast-separable", "naive-dense", "numpy-dense")]
        assert all(r.verified and r.p10_ns <= r.median_ns <= r.p90_ns for r in reports)
        perf.write_bench_csv(reports, tmp_path / "b.csv")
        perf.write_bench_json(reports, tmp_path / "b.json")
        with open(tmp_path / "b.csv") as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0]) == perf.BENCH_COLUMNS
        assert [r["path"] for r in rows] == ["fast", "naive", "numpy"]
        data = json.loads((tmp_path / "b.json").read_text())
        assert [list(d) for d in data] == [perf.BENCH_COLUMNS] * 3
        assert data[0]["kh"] == 19

    def test_timing_scales_with_channels(self):
        t1 = perf.bench("fast-separable", (1, 16, 28, 28), rng=Rng(2)).median_ns
        t2 = perf.bench("fast-separable", (1, 32, 28, 28), rng=Rng(2)).median_ns
        assert t1 / 1.5 <= t2 <= 6 * t1


@pytest.fixture(scope="module")
def models():
    m = build_model(ModelConfig.variant("XT", input_size=(64, 64)), Rng(21))
    return m, perf.reparam_inference_mode(m)


class TestReparamMode:
    def test_logits_close(self, models):
        m, f = models
        x = Rng(22).standard_normal((4, 3, 64, 64)).astype(np.float32)
        a, b = model_forward(m, x), model_forward(f, x)
        assert np.max(np.abs(a - b)) <= 1e-3
        assert np.array_equal(a.argmax(1), b.argmax(1))

    def test_kernel_structure(self, models):
        m, f = models
        k = f.fused_kernels["stages.0.blocks.0"].k  # 16x16 stage -> 31x31 kernel
        assert k.shape == (48, 31, 31)
        outer = k.copy()
        local = m.params["stages.0.blocks.0.spatial.local.weight"]
        outer[:, 12:19, 12:19] -= local
        for sl in outer[:3]:
            s = np.linalg.svd(sl.astype(np.float64), compute_uv=False)
            assert s[1] <= 1e-5 * s[0]
