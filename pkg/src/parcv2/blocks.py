"""Spatial/channel bifurcate gate units and the full ParC V2 block."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops
from .ops import LocalKernel7, OversizedKernelPair
from .tensor import (
    DimensionError,
    PointwiseParams,
    channel_layernorm,
    channel_layernorm_vjp,
    gelu,
    gelu_vjp,
    pointwise_conv,
    pointwise_vjp,
)


@dataclass(frozen=True)
class SpatialBGUParams:
    pw_in: PointwiseParams
    local: LocalKernel7
    oversized: OversizedKernelPair
    pw_gate: PointwiseParams
    pw_out: PointwiseParams
    # separate ParC-branch output projection; None means it is folded into pw_out
    pw_mid: Optional[PointwiseParams] = None

    def __post_init__(self):
        c = self.pw_in.c_out
        widths = [self.pw_in.c_in, self.local.channels, self.oversized.channels,
                  self.pw_gate.c_in, self.pw_gate.c_out, self.pw_out.c_in, self.pw_out.c_out]
        if self.pw_mid is not None:
            widths += [self.pw_mid.c_in, self.pw_mid.c_out]
        if any(v != c for v in widths):
            raise DimensionError("spatial BGU widths must all equal the block width")

    @property
    def width(self) -> int:
        return self.pw_in.c_out


@dataclass(frozen=True)
class ChannelBGUParams:
    w1: PointwiseParams  # C -> hidden
    w2: PointwiseParams  # C -> hidden
    w3: PointwiseParams  # hidden -> C
    alpha_tilde: float = 2.5

    def __post_init__(self):
        c, hid = self.w1.c_in, self.w1.c_out
        if (self.w2.c_in, self.w2.c_out) != (c, hid) or (self.w3.c_in, self.w3.c_out) != (hid, c):
            raise DimensionError("channel BGU weights are not mutually consistent")

    @property
    def num_params(self) -> int:
        return self.w1.num_params + self.w2.num_params + self.w3.num_params


@dataclass(frozen=True)
class BlockParams:
    norm1: tuple[np.ndarray, np.ndarray]
    norm2: tuple[np.ndarray, np.ndarray]
    spatial: SpatialBGUParams
    channel: ChannelBGUParams
    res_scale1: np.ndarray
    res_scale2: np.ndarray


def hidden_width(c: int, alpha_tilde: float) -> int:
    return int(round(alpha_tilde * c))


def channel_bgu_param_count(c: int, alpha_tilde: float = 2.5) -> int:
    """3*a*C^2 + 2*a*C + C, evaluated with the rounded hidden width."""
    h = hidden_width(c, alpha_tilde)
    return 3 * h * c + 2 * h + c


def ffn_param_count(c: int, alpha: float = 4) -> int:
    h = hidden_width(c, alpha)
    return 2 * h * c + h + c


def _scale(x: np.ndarray, s: np.ndarray) -> np.ndarray:
    return x * s[None, :, None, None]


def parc_branch(x: np.ndarray, p: SpatialBGUParams) -> np.ndarray:
    """Pointwise-in, then local 7x7 plus oversized global, summed."""
    u = pointwise_conv(x, p.pw_in)
    y = ops.dwconv7x7(u, p.local) + ops.parc_oversized(u, p.oversized)
    if p.pw_mid is not None:
        y = pointwise_conv(y, p.pw_mid)
    return y


def parc_branch_fused(x: np.ndarray, p: SpatialBGUParams, fused: ops.Dense2DKernel,
                      conv=ops.dense_dwconv2d) -> np.ndarray:
    """Same as :func:`parc_branch` with both depthwise branches replaced by one kernel."""
    y = conv(pointwise_conv(x, p.pw_in), fused)
    if p.pw_mid is not None:
        y = pointwise_conv(y, p.pw_mid)
    return y


def fused_branch_kernel(p: SpatialBGUParams) -> ops.Dense2DKernel:
    # below 4x4 maps the rank-1 kernel is under 7x7; its extra taps would only read padding
    k2d = ops.embed_center(ops.compose_2d(p.oversized), 7, 7)
    return ops.fuse_local_global(k2d, p.local)


def spatial_bgu(x: np.ndarray, p: SpatialBGUParams, branch=None) -> np.ndarray:
    x1 = parc_branch(x, p) if branch is None else branch(x)
    x2 = pointwise_conv(x, p.pw_gate)
    return pointwise_conv(x1 * x2, p.pw_out)


def channel_bgu(x: np.ndarray, p: ChannelBGUParams) -> np.ndarray:
    x1 = gelu(pointwise_conv(x, p.w1))
    x2 = pointwise_conv(x, p.w2)
    return pointwise_conv(x1 * x2, p.w3)


def ffn_reference(x: np.ndarray, w1: PointwiseParams, w2: PointwiseParams) -> np.ndarray:
    """Plain two-layer GELU feed-forward, the channel BGU's baseline."""
    return pointwise_conv(gelu(pointwise_conv(x, w1)), w2)


def parcv2_block(x: np.ndarray, p: BlockParams, branch=None) -> np.ndarray:
    if x.shape[1] != p.spatial.width:
        raise DimensionError(f"block width {p.spatial.width}, input has {x.shape[1]} channels")
    h = x + _scale(spatial_bgu(channel_layernorm(x, *p.norm1), p.spatial, branch), p.res_scale1)
    return h + _scale(channel_bgu(channel_layernorm(h, *p.norm2), p.channel), p.res_scale2)


# backward passes -----------------------------------------------------------
# Each returns (grad_x, grads) where grads maps parameter paths to arrays.

def _pw_grads(prefix, gw, gb):
    return {f"{prefix}.weight": gw, f"{prefix}.bias": gb}


def parc_branch_vjp(g, x, p: SpatialBGUParams):
    grads = {}
    u = pointwise_conv(x, p.pw_in)
    if p.pw_mid is not None:
        y = ops.dwconv7x7(u, p.local) + ops.parc_oversized(u, p.oversized)
        g, gw, gb = pointwise_vjp(g, y, p.pw_mid)
        grads.update(_pw_grads("pw_mid", gw, gb))
    gu_l, gk7, gb7 = ops.dwconv7x7_vjp(g, u, p.local)
    gu_g, gkh, gkw, gbo = ops.parc_oversized_vjp(g, u, p.oversized)
    grads["local.weight"] = gk7
    if gb7 is not None:
        grads["local.bias"] = gb7
    grads["oversized.k_h"] = gkh
    grads["oversized.k_w"] = gkw
    if gbo is not None:
        grads["oversized.bias"] = gbo
    gx, gw, gb = pointwise_vjp(gu_l + gu_g, x, p.pw_in)
    grads.update(_pw_grads("pw_in", gw, gb))
    return gx, grads


def spatial_bgu_vjp(g, x, p: SpatialBGUParams):
    x1 = parc_branch(x, p)
    x2 = pointwise_conv(x, p.pw_gate)
    gm, gw, gb = pointwise_vjp(g, x1 * x2, p.pw_out)
    grads = _pw_grads("pw_out", gw, gb)
    gx_gate, gw, gb = pointwise_vjp(gm * x1, x, p.pw_gate)
    grads.update(_pw_grads("pw_gate", gw, gb))
    gx_branch, bgrads = parc_branch_vjp(gm * x2, x, p)
    grads.update(bgrads)
    return gx_gate + gx_branch, grads


def channel_bgu_vjp(g, x, p: ChannelBGUParams):
    a1 = pointwise_conv(x, p.w1)
    x1 = gelu(a1)
    x2 = pointwise_conv(x, p.w2)
    gm, gw, gb = pointwise_vjp(g, x1 * x2, p.w3)
    grads = _pw_grads("w3", gw, gb)
    ga1 = gelu_vjp(gm * x2, a1)
    gxa, gw, gb = pointwise_vjp(ga1, x, p.w1)
    grads.update(_pw_grads("w1", gw, gb))
    gxb, gw, gb = pointwise_vjp(gm * x1, x, p.w2)
    grads.update(_pw_grads("w2", gw, gb))
    return gxa + gxb, grads


def parcv2_block_vjp(g, x, p: BlockParams):
    n1 = channel_layernorm(x, *p.norm1)
    s = spatial_bgu(n1, p.spatial)
    h = x + _scale(s, p.res_scale1)
    n2 = channel_layernorm(h, *p.norm2)
    cb = channel_bgu(n2, p.channel)

    grads = {"res_scale2": (g * cb).sum(axis=(0, 2, 3))}
    gn2, cgrads = channel_bgu_vjp(_scale(g, p.res_scale2), n2, p.channel)
    grads.update({f"channel.{k}": v for k, v in cgrads.items()})
    gh_norm, gg2, gb2 = channel_layernorm_vjp(gn2, h, p.norm2[0])
    grads["norm2.weight"], grads["norm2.bias"] = gg2, gb2
    gh = g + gh_norm

    grads["res_scale1"] = (gh * s).sum(axis=(0, 2, 3))
    gn1, sgrads = spatial_bgu_vjp(_scale(gh, p.res_scale1), n1, p.spatial)
    grads.update({f"spatial.{k}": v for k, v in sgrads.items()})
    gx_norm, gg1, gb1 = channel_layernorm_vjp(gn1, x, p.norm1[0])
    grads["norm1.weight"], grads["norm1.bias"] = gg1, gb1
    return gh + gx_norm, grads
