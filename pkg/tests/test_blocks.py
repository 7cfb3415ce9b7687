import math

import numpy as np
import pytest

from parcv2 import blocks as B
from parcv2 import oracle
from parcv2.ops import LocalKernel7, OversizedKernelPair
from parcv2.suites import random_block, random_channel, random_pw, random_spatial
from parcv2.tensor import DimensionError, PointwiseParams, Rng

STAGE_WIDTHS = (32, 64, 128, 320, 512)


def _delta_local(c, dtype=np.float32):
    k = np.zeros((c, 7, 7), dtype)
    k[:, 3, 3] = 1
    return LocalKernel7(k)


def _zero_pair(c, h, w, dtype=np.float32):
    return OversizedKernelPair(np.zeros((c, 2 * h - 1), dtype), np.zeros((c, 2 * w - 1), dtype))


def _straight_line_spatial(x, p):
    """Spatial gate unit written out with plain matrix products and the loop
    oracle, in float64."""
    x = x.astype(np.float64)

    def pw(v, q):
        n, c, h, w = v.shape
        flat = v.transpose(0, 2, 3, 1).reshape(-1, c) @ q.weight.T.astype(np.float64) + q.bias
        return flat.reshape(n, h, w, -1).transpose(0, 3, 1, 2)

    h, w = x.shape[2:]
    u = pw(x, p.pw_in)
    local = oracle.naive_conv_oracle(u, p.local.k, (3, 3, 3, 3)) + p.local.bias[None, :, None, None]
    glob = oracle.oversized_oracle(u, p.oversized.k_h, p.oversized.k_w, p.oversized.bias)
    x1 = local + glob
    if p.pw_mid is not None:
        x1 = pw(x1, p.pw_mid)
    x2 = pw(x, p.pw_gate)
    return pw(x1 * x2, p.pw_out)


class TestParcBranch:
    def test_local_identity_path(self, rng):
        c = 3
        p = B.SpatialBGUParams(PointwiseParams.identity(c), _delta_local(c), _zero_pair(c, 5, 4),
                               PointwiseParams.identity(c), PointwiseParams.identity(c),
                               pw_mid=PointwiseParams.identity(c))
        x = rng.standard_normal((1, c, 5, 4)).astype(np.float32)
        np.testing.assert_array_equal(B.parc_branch(x, p), x)

    def test_global_identity_path(self, rng):
        c = 2
        p = B.SpatialBGUParams(PointwiseParams.identity(c), LocalKernel7(np.zeros((c, 7, 7), np.float32)),
                               OversizedKernelPair.delta(c, 6, 6), PointwiseParams.identity(c),
                               PointwiseParams.identity(c), pw_mid=PointwiseParams.identity(c))
        x = rng.standard_normal((2, c, 6, 6)).astype(np.float32)
        np.testing.assert_array_equal(B.parc_branch(x, p), x)

    @pytest.mark.parametrize("projection", [False, True])
    def test_fused_equals_branched(self, rng, projection):
        p = random_spatial(rng, 4, 8, 8, branch_projection=projection)
        x = rng.standard_normal((1, 4, 8, 8)).astype(np.float32)
        fused = B.fused_branch_kernel(p)
        rep = oracle.check_equivalence(B.parc_branch(x, p), B.parc_branch_fused(x, p, fused), 1e-4)
        assert rep.passed, rep

    def test_fused_tiny_map(self, rng):
        # 2x3 maps give a 3x5 rank-1 kernel, smaller than the 7x7 local window
        p = random_spatial(rng, 2, 2, 3)
        x = rng.standard_normal((1, 2, 2, 3)).astype(np.float32)
        fused = B.fused_branch_kernel(p)
        assert fused.k.shape == (2, 7, 7)
        assert np.max(np.abs(B.parc_branch(x, p) - B.parc_branch_fused(x, p, fused))) <= 1e-5


class TestSpatialBGU:
    def test_neutral_gate(self, rng):
        p = random_spatial(rng, 3, 4, 4)
        gate = PointwiseParams(np.zeros((3, 3), np.float32), np.ones(3, np.float32))
        p1 = B.SpatialBGUParams(p.pw_in, p.local, p.oversized, gate, p.pw_out)
        x = rng.standard_normal((1, 3, 4, 4)).astype(np.float32)
        from parcv2.tensor import pointwise_conv
        np.testing.assert_array_equal(B.spatial_bgu(x, p1), pointwise_conv(B.parc_branch(x, p1), p.pw_out))

    def test_annihilating_gate(self, rng):
        p = random_spatial(rng, 3, 4, 4)
        p0 = B.SpatialBGUParams(p.pw_in, p.local, p.oversized, PointwiseParams.zeros(3, 3), p.pw_out)
        x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
        out = B.spatial_bgu(x, p0)
        np.testing.assert_array_equal(out, np.broadcast_to(p.pw_out.bias[None, :, None, None], out.shape))

    @pytest.mark.parametrize("projection", [False, True])
    def test_straight_line_evaluation(self, rng, projection):
        p = random_spatial(rng, 5, 6, 7, np.float64, branch_projection=projection)
        x = rng.standard_normal((2, 5, 6, 7))
        assert np.max(np.abs(B.spatial_bgu(x, p) - _straight_line_spatial(x, p))) <= 1e-6

    def test_width_mismatch(self, rng):
        p = random_spatial(rng, 3, 4, 4)
        with pytest.raises(DimensionError):
            B.SpatialBGUParams(p.pw_in, p.local, p.oversized, p.pw_gate, PointwiseParams.identity(4))


class TestChannelBGU:
    def test_zero_second_branch(self, rng):
        p = random_channel(rng, 4)
        hid = p.w1.c_out
        p0 = B.ChannelBGUParams(p.w1, PointwiseParams.zeros(hid, 4), p.w3)
        x = rng.standard_normal((1, 4, 3, 3)).astype(np.float32)
        out = B.channel_bgu(x, p0)
        np.testing.assert_array_equal(out, np.broadcast_to(p.w3.bias[None, :, None, None], out.shape))

    def test_scalar_case(self):
        one = PointwiseParams(np.ones((1, 1)), np.zeros(1))
        p = B.ChannelBGUParams(one, one, one, alpha_tilde=1.0)
        out = B.channel_bgu(np.ones((1, 1, 1, 1)), p)
        assert out.item() == pytest.approx(0.5 * (1 + math.erf(1 / math.sqrt(2))), abs=1e-15)
        assert out.item() == pytest.approx(0.8413447, abs=1e-7)

    def test_param_count_c64(self):
        p = random_channel(Rng(0), 64)
        assert p.num_params == 31104
        assert B.channel_bgu_param_count(64) == 31104

    @pytest.mark.parametrize("c", STAGE_WIDTHS)
    def test_count_formula(self, c):
        p = random_channel(Rng(c), c)
        a = 2.5
        assert p.num_params == B.channel_bgu_param_count(c) == int(3 * a * c * c + 2 * a * c + c)

    @pytest.mark.parametrize("c", STAGE_WIDTHS)
    def test_lighter_than_ffn(self, c):
        assert B.channel_bgu_param_count(c) < B.ffn_param_count(c, 4)

    def test_lighter_than_ffn_all_widths(self):
        # 7.5C^2 + 6C < 8C^2 + 5C exactly when C > 2
        assert all(B.channel_bgu_param_count(c) < B.ffn_param_count(c) for c in range(4, 2048, 2))
        assert B.channel_bgu_param_count(2) == B.ffn_param_count(2) == 42

    def test_inconsistent_widths(self, rng):
        with pytest.raises(DimensionError):
            B.ChannelBGUParams(random_pw(rng, 10, 4), random_pw(rng, 8, 4), random_pw(rng, 4, 10))


class TestFFN:
    def test_zero_weights(self):
        w1 = PointwiseParams(np.zeros((8, 2)), np.zeros(8))
        w2 = PointwiseParams(np.zeros((2, 8)), np.array([1.5, -0.5]))
        out = B.ffn_reference(np.ones((1, 2, 2, 2)), w1, w2)
        np.testing.assert_array_equal(out[0, :, 0, 0], [1.5, -0.5])

    def test_count(self):
        assert B.ffn_param_count(64) == 2 * 4 * 64 * 64 + 4 * 64 + 64


class TestBlock:
    def test_zero_branches_are_identity(self, rng):
        p = random_block(rng, 4, 5, 5)
        s = B.SpatialBGUParams(p.spatial.pw_in, p.spatial.local, p.spatial.oversized,
                               p.spatial.pw_gate, PointwiseParams.zeros(4, 4))
        ch = B.ChannelBGUParams(p.channel.w1, p.channel.w2, PointwiseParams.zeros(4, p.channel.w1.c_out))
        q = B.BlockParams(p.norm1, p.norm2, s, ch, p.res_scale1, p.res_scale2)
        x = rng.standard_normal((2, 4, 5, 5)).astype(np.float32)
        assert B.parcv2_block(x, q).tobytes() == x.tobytes()

    def test_zero_res_scales(self, rng):
        p = random_block(rng, 3, 4, 4)
        z = np.zeros(3, np.float32)
        q = B.BlockParams(p.norm1, p.norm2, p.spatial, p.channel, z, z)
        x = rng.standard_normal((1, 3, 4, 4)).astype(np.float32)
        np.testing.assert_array_equal(B.parcv2_block(x, q), x)

    def test_random_block_smoke(self):
        rng = Rng(48)
        p = random_block(rng, 48, 8, 8)
        x = rng.standard_normal((2, 48, 8, 8)).astype(np.float32)
        out = B.parcv2_block(x, p)
        assert out.shape == x.shape
        assert np.all(np.isfinite(out))
        assert np.linalg.norm(out - x) > 0

    def test_width_checked(self, rng):
        p = random_block(rng, 3, 4, 4)
        with pytest.raises(DimensionError):
            B.parcv2_block(np.zeros((1, 4, 4, 4), np.float32), p)

    def test_vjp_keys_cover_params(self, rng):
        p = random_block(rng, 2, 3, 3, np.float64)
        x = rng.standard_normal((1, 2, 3, 3))
        gx, grads = B.parcv2_block_vjp(np.ones_like(x), x, p)
        assert gx.shape == x.shape
        expected = {"norm1.weight", "norm1.bias", "norm2.weight", "norm2.bias", "res_scale1",
                    "res_scale2", "spatial.pw_in.weight", "spatial.local.weight",
                    "spatial.oversized.k_h", "spatial.oversized.k_w", "spatial.oversized.bias",
                    "spatial.pw_gate.weight", "spatial.pw_out.bias", "channel.w1.weight",
                    "channel.w3.bias"}
        assert expected <= set(grads)
