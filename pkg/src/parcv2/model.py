"""Four-stage ParCNetV2 assembly, parameter/MAC accounting and resolution
adaptation.

Parameters live in a flat, ordered ``{name: ndarray}`` dict so that the
same naming drives initialization, counting and checkpoints. Layout::

    stem:        4x4 stride-4 conv (3 -> C0) + channel norm
    stage s>0:   channel norm + 3x3 stride-2 conv (C_{s-1} -> C_s)
    stage s:     blocks[s] ParC V2 blocks at width C_s
    head:        global average pool + norm + linear
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import blocks as B
from .ops import Dense2DKernel, LocalKernel7, OversizedKernelPair, resize_kernel_linear
from .tensor import (
    DimensionError,
    PointwiseParams,
    Rng,
    channel_layernorm,
    global_avg_pool,
    vector_layernorm,
)

VARIANTS = {
    "XT": ((48, 96, 192, 320), (3, 3, 9, 2)),
    "T": ((64, 128, 320, 512), (3, 3, 12, 3)),
    "S": ((64, 128, 320, 512), (3, 9, 24, 3)),
    "B": ((96, 192, 384, 576), (3, 9, 24, 3)),
}

# (params, MACs at 224x224) as reported for each variant
REFERENCE_COUNTS = {
    "XT": (7.4e6, 1.6e9),
    "T": (25e6, 4.3e9),
    "S": (39e6, 7.8e9),
    "B": (56e6, 12.5e9),
}

INIT_STD = 0.02


class ResolutionError(DimensionError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[int, int, int, int]
    blocks: tuple[int, int, int, int]
    input_size: tuple[int, int] = (224, 224)
    alpha_tilde: float = 2.5
    num_classes: int = 1000
    # keep a separate ParC-branch output projection in front of the gate product
    branch_projection: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        object.__setattr__(self, "input_size", tuple(int(s) for s in self.input_size))
        if len(self.channels) != 4 or len(self.blocks) != 4:
            raise ValueError("channels and blocks must have four entries")
        if min(self.channels) < 1 or min(self.blocks) < 0 or self.num_classes < 1:
            raise ValueError("channels/num_classes must be positive, blocks non-negative")
        stage_sizes(self.input_size)

    @classmethod
    def variant(cls, name: str, **kw) -> ModelConfig:
        try:
            channels, blocks = VARIANTS[name.upper()]
        except KeyError:
            raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None
        return cls(channels, blocks, **kw)

    @property
    def stage_sizes(self) -> list[tuple[int, int]]:
        return stage_sizes(self.input_size)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def stage_sizes(input_size) -> list[tuple[int, int]]:
    h, w = input_size
    if h < 32 or w < 32:
        raise ResolutionError(
            f"input {h}x{w} underflows the last stage (needs at least 32x32)"
        )
    if h % 32 or w % 32:
        raise ResolutionError(f"input {h}x{w} must be a multiple of 32 in both axes")
    return [(h // (4 << s), w // (4 << s)) for s in range(4)]


def _block_prefix(s: int, b: int) -> str:
    return f"stages.{s}.blocks.{b}"


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered tensor manifest for ``cfg``."""
    shapes: dict[str, tuple[int, ...]] = {}

    def pw(name, c_out, c_in):
        shapes[f"{name}.weight"] = (c_out, c_in)
        shapes[f"{name}.bias"] = (c_out,)

    def norm(name, c):
        shapes[f"{name}.weight"] = (c,)
        shapes[f"{name}.bias"] = (c,)

    c0 = cfg.channels[0]
    shapes["stem.conv.weight"] = (c0, 3, 4, 4)
    shapes["stem.conv.bias"] = (c0,)
    norm("stem.norm", c0)
    for s, ((h, w), c, nb) in enumerate(zip(cfg.stage_sizes, cfg.channels, cfg.blocks)):
        if s > 0:
            cp = cfg.channels[s - 1]
            norm(f"stages.{s}.downsample.norm", cp)
            shapes[f"stages.{s}.downsample.conv.weight"] = (c, cp, 3, 3)
            shapes[f"stages.{s}.downsample.conv.bias"] = (c,)
        hid = B.hidden_width(c, cfg.alpha_tilde)
        for b in range(nb):
            p = _block_prefix(s, b)
            norm(f"{p}.norm1", c)
            pw(f"{p}.spatial.pw_in", c, c)
            shapes[f"{p}.spatial.local.weight"] = (c, 7, 7)
            shapes[f"{p}.spatial.local.bias"] = (c,)
            shapes[f"{p}.spatial.oversized.k_h"] = (c, 2 * h - 1)
            shapes[f"{p}.spatial.oversized.k_w"] = (c, 2 * w - 1)
            shapes[f"{p}.spatial.oversized.bias"] = (c,)
            if cfg.branch_projection:
                pw(f"{p}.spatial.pw_mid", c, c)
            pw(f"{p}.spatial.pw_gate", c, c)
            pw(f"{p}.spatial.pw_out", c, c)
            norm(f"{p}.norm2", c)
            pw(f"{p}.channel.w1", hid, c)
            pw(f"{p}.channel.w2", hid, c)
            pw(f"{p}.channel.w3", c, hid)
            shapes[f"{p}.res_scale1"] = (c,)
            shapes[f"{p}.res_scale2"] = (c,)
    norm("head.norm", cfg.channels[3])
    shapes["head.fc.weight"] = (cfg.num_classes, cfg.channels[3])
    shapes["head.fc.bias"] = (cfg.num_classes,)
    return shapes


def _init_value(name: str, shape, rng: Rng) -> np.ndarray:
    if name.endswith("res_scale1") or name.endswith("res_scale2"):
        return np.ones(shape)
    leaf = name.rsplit(".", 2)
    if "norm" in leaf[-2]:
        return np.ones(shape) if leaf[-1] == "weight" else np.zeros(shape)
    if name.endswith("bias"):
        return np.zeros(shape)
    return rng.truncated_normal(shape, INIT_STD)


@dataclass(frozen=True)
class Model:
    cfg: ModelConfig
    params: dict[str, np.ndarray]
    # reparameterized inference: block prefix -> fused depthwise kernel
    fused_kernels: Optional[dict[str, Dense2DKernel]] = None
    fused_conv: Optional[Callable] = field(default=None, compare=False)

    @property
    def dtype(self):
        return self.params["stem.conv.weight"].dtype

    @property
    def input_size(self) -> tuple[int, int]:
        return self.cfg.input_size

    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def block_params(self, s: int, b: int) -> B.BlockParams:
        p = self.params
        pre = _block_prefix(s, b)

        def pw(name):
            return PointwiseParams(p[f"{pre}.{name}.weight"], p[f"{pre}.{name}.bias"])

        spatial = B.SpatialBGUParams(
            pw_in=pw("spatial.pw_in"),
            local=LocalKernel7(p[f"{pre}.spatial.local.weight"], p[f"{pre}.spatial.local.bias"]),
            oversized=OversizedKernelPair(
                p[f"{pre}.spatial.oversized.k_h"],
                p[f"{pre}.spatial.oversized.k_w"],
                p[f"{pre}.spatial.oversized.bias"],
            ),
            pw_gate=pw("spatial.pw_gate"),
            pw_out=pw("spatial.pw_out"),
            pw_mid=pw("spatial.pw_mid") if self.cfg.branch_projection else None,
        )
        channel = B.ChannelBGUParams(pw("channel.w1"), pw("channel.w2"), pw("channel.w3"),
                                     self.cfg.alpha_tilde)
        return B.BlockParams(
            norm1=(p[f"{pre}.norm1.weight"], p[f"{pre}.norm1.bias"]),
            norm2=(p[f"{pre}.norm2.weight"], p[f"{pre}.norm2.bias"]),
            spatial=spatial,
            channel=channel,
            res_scale1=p[f"{pre}.res_scale1"],
            res_scale2=p[f"{pre}.res_scale2"],
        )


def build_model(cfg: ModelConfig, rng: Rng, dtype=np.float32) -> Model:
    params = {name: _init_value(name, shape, rng).astype(dtype)
              for name, shape in param_shapes(cfg).items()}
    return Model(cfg, params)


def _stem(x, p):
    w, bias = p["stem.conv.weight"], p["stem.conv.bias"]
    n, c, h, wd = x.shape
    patches = x.reshape(n, c, h // 4, 4, wd // 4, 4)
    out = np.einsum("ocab,nchawb->nohw", w, patches)
    out += bias[None, :, None, None]
    return channel_layernorm(out, p["stem.norm.weight"], p["stem.norm.bias"])


def _downsample(x, p, s):
    pre = f"stages.{s}.downsample"
    x = channel_layernorm(x, p[f"{pre}.norm.weight"], p[f"{pre}.norm.bias"])
    w, bias = p[f"{pre}.conv.weight"], p[f"{pre}.conv.bias"]
    n, c, h, wd = x.shape
    ho, wo = (h + 1) // 2, (wd + 1) // 2
    xp = np.zeros((n, c, h + 2, wd + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    out = np.zeros((n, w.shape[0], ho, wo), dtype=x.dtype)
    for a in range(3):
        for b in range(3):
            out += np.einsum("oc,nchw->nohw", w[:, :, a, b],
                             xp[:, :, a:a + 2 * ho:2, b:b + 2 * wo:2])
    out += bias[None, :, None, None]
    return out


def model_features(m: Model, x: np.ndarray) -> np.ndarray:
    """Backbone output before the head, shape (N, C3, H/32, W/32)."""
    if x.ndim != 4 or x.shape[1] != 3:
        raise DimensionError(f"expected (N, 3, H, W) input, got {x.shape}")
    if tuple(x.shape[2:]) != m.input_size:
        raise ResolutionError(
            f"model kernels are bound to {m.input_size[0]}x{m.input_size[1]} but input is "
            f"{x.shape[2]}x{x.shape[3]}; call adapt_to_resolution first"
        )
    x = np.ascontiguousarray(x, dtype=m.dtype)
    p = m.params
    x = _stem(x, p)
    for s, nb in enumerate(m.cfg.blocks):
        if s > 0:
            x = _downsample(x, p, s)
        for b in range(nb):
            bp = m.block_params(s, b)
            branch = None
            if m.fused_kernels is not None:
                k = m.fused_kernels[_block_prefix(s, b)]
                conv = m.fused_conv
                branch = (lambda t, sp=bp.spatial, k=k, conv=conv:
                          B.parc_branch_fused(t, sp, k, conv))
            x = B.parcv2_block(x, bp, branch)
    return x


def model_forward(m: Model, x: np.ndarray) -> np.ndarray:
    """Logits of shape (N, num_classes)."""
    p = m.params
    v = global_avg_pool(model_features(m, x))
    v = vector_layernorm(v, p["head.norm.weight"], p["head.norm.bias"])
    return np.einsum("nc,kc->nk", v, p["head.fc.weight"]) + p["head.fc.bias"]


def adapt_to_resolution(m: Model, h: int, w: int) -> Model:
    """New model whose oversized kernels are zoomed to the stage sizes of an
    ``h x w`` input. Every other tensor is shared unchanged."""
    cfg = dataclasses.replace(m.cfg, input_size=(h, w))
    params = dict(m.params)
    for s, (sh, sw) in enumerate(cfg.stage_sizes):
        for b in range(cfg.blocks[s]):
            pre = f"{_block_prefix(s, b)}.spatial.oversized"
            k = resize_kernel_linear(
                OversizedKernelPair(params[f"{pre}.k_h"], params[f"{pre}.k_w"]), sh, sw
            )
            params[f"{pre}.k_h"], params[f"{pre}.k_w"] = k.k_h, k.k_w
    return Model(cfg, params)


# accounting ---------------------------------------------------------------

@dataclass
class CountReport:
    cfg: ModelConfig
    rows: list[tuple[str, int, int]]  # (module, params, MACs)
    channel_bgu_per_block: dict[int, int]  # stage -> params of one channel BGU

    @property
    def total_params(self) -> int:
        return sum(r[1] for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r[2] for r in self.rows)


def _group(name: str) -> str:
    parts = name.split(".")
    if parts[0] != "stages":
        return parts[0]
    s = parts[1]
    if parts[2] == "downsample":
        return f"stage{s}.downsample"
    comp = parts[4]
    label = {"spatial": "spatial_bgu", "channel": "channel_bgu"}.get(comp, "norm+res_scale")
    return f"stage{s}.{label}"


def _layer_macs(name: str, shape, cfg: ModelConfig) -> int:
    """MACs of the layer owning weight ``name``: taps x output elements."""
    if name.endswith("bias") or "norm" in name or "res_scale" in name:
        return 0
    if name == "stem.conv.weight":
        h, w = cfg.stage_sizes[0]
        return int(np.prod(shape)) * h * w
    if name == "head.fc.weight":
        return int(np.prod(shape))
    # pointwise, depthwise, oversized and downsample weights all run at stage size
    h, w = cfg.stage_sizes[int(name.split(".")[1])]
    return int(np.prod(shape)) * h * w


def count_params_and_macs(cfg: ModelConfig) -> CountReport:
    groups: dict[str, list[int]] = {}
    per_block: dict[int, int] = {}
    for name, shape in param_shapes(cfg).items():
        g = groups.setdefault(_group(name), [0, 0])
        g[0] += int(np.prod(shape))
        g[1] += _layer_macs(name, shape, cfg)
        if name.startswith("stages.") and ".blocks.0.channel." in name:
            s = int(name.split(".")[1])
            per_block[s] = per_block.get(s, 0) + int(np.prod(shape))
    rows = [(k, v[0], v[1]) for k, v in groups.items()]
    return CountReport(cfg, rows, per_block)
