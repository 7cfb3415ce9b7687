"""Oversized separable convolution, local depthwise convolution, kernel
composition/fusion, kernel zooming, and the matching backward passes.

All convolutions are depthwise cross-correlations (no kernel flip) with zero
extension outside the feature map. Kernels are stored center-indexed: for a
kernel of length ``2H - 1`` the logical tap ``s`` in ``[-(H-1), H-1]`` lives
at storage slot ``s + H - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import DimensionError


@dataclass(frozen=True)
class OversizedKernelPair:
    k_h: np.ndarray  # (C, 2H-1)
    k_w: np.ndarray  # (C, 2W-1)
    bias: Optional[np.ndarray] = None  # (C,), applied after the horizontal pass

    def __post_init__(self):
        if self.k_h.ndim != 2 or self.k_w.ndim != 2:
            raise DimensionError("k_h and k_w must be (C, L) arrays")
        if self.k_h.shape[0] != self.k_w.shape[0]:
            raise DimensionError("k_h and k_w channel counts differ")
        if self.k_h.shape[1] % 2 == 0 or self.k_w.shape[1] % 2 == 0:
            raise DimensionError("oversized kernel lengths must be odd")
        if self.bias is not None and self.bias.shape != (self.channels,):
            raise DimensionError("bias length must equal channel count")

    @property
    def channels(self) -> int:
        return self.k_h.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        """Feature size (H, W) the pair is bound to."""
        return (self.k_h.shape[1] + 1) // 2, (self.k_w.shape[1] + 1) // 2

    @classmethod
    def delta(cls, c: int, h: int, w: int, dtype=np.float32) -> OversizedKernelPair:
        k_h = np.zeros((c, 2 * h - 1), dtype)
        k_w = np.zeros((c, 2 * w - 1), dtype)
        k_h[:, h - 1] = 1
        k_w[:, w - 1] = 1
        return cls(k_h, k_w)


@dataclass(frozen=True)
class LocalKernel7:
    k: np.ndarray  # (C, 7, 7)
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.k.ndim != 3 or self.k.shape[1:] != (7, 7):
            raise DimensionError(f"local kernel must be (C, 7, 7), got {self.k.shape}")
        if self.bias is not None and self.bias.shape != (self.k.shape[0],):
            raise DimensionError("bias length must equal channel count")

    @property
    def channels(self) -> int:
        return self.k.shape[0]


@dataclass(frozen=True)
class Dense2DKernel:
    k: np.ndarray  # (C, K_h, K_w), odd extents
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.k.ndim != 3 or self.k.shape[1] % 2 == 0 or self.k.shape[2] % 2 == 0:
            raise DimensionError(f"dense kernel must be (C, odd, odd), got {self.k.shape}")

    @property
    def channels(self) -> int:
        return self.k.shape[0]

    @property
    def padding(self) -> tuple[int, int]:
        return (self.k.shape[1] - 1) // 2, (self.k.shape[2] - 1) // 2


def _check_channels(x: np.ndarray, c: int):
    if x.ndim != 4:
        raise DimensionError(f"expected (N, C, H, W), got {x.shape}")
    if x.shape[1] != c:
        raise DimensionError(f"kernel has {c} channels, input has {x.shape[1]}")


def _correlate(x: np.ndarray, k: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """Depthwise correlation of ``x`` (N,C,H,W) with ``k`` (C,Kh,Kw).

    Output has the input's spatial size; ``ph``/``pw`` give the zero padding
    on each side. Taps falling fully outside the map are skipped; the
    remaining ones are accumulated in row-major tap order.
    """
    n, c, h, w = x.shape
    kh, kw = k.shape[1:]
    out = np.zeros_like(x)
    for a in range(kh):
        di = a - ph
        i0, i1 = max(0, -di), min(h, h - di)
        if i0 >= i1:
            continue
        for b in range(kw):
            dj = b - pw
            j0, j1 = max(0, -dj), min(w, w - dj)
            if j0 >= j1:
                continue
            out[:, :, i0:i1, j0:j1] += (
                k[None, :, a, b, None, None]
                * x[:, :, i0 + di:i1 + di, j0 + dj:j1 + dj]
            )
    return out


def _kernel_grad(g: np.ndarray, x: np.ndarray, kh: int, kw: int, ph: int, pw: int) -> np.ndarray:
    """grad_k[c,a,b] = sum_{n,i,j} g[n,c,i,j] * x[n,c,i+a-ph,j+b-pw]."""
    n, c, h, w = x.shape
    gk = np.zeros((c, kh, kw), dtype=x.dtype)
    for a in range(kh):
        di = a - ph
        i0, i1 = max(0, -di), min(h, h - di)
        if i0 >= i1:
            continue
        for b in range(kw):
            dj = b - pw
            j0, j1 = max(0, -dj), min(w, w - dj)
            if j0 >= j1:
                continue
            gk[:, a, b] = np.einsum(
                "ncij,ncij->c",
                g[:, :, i0:i1, j0:j1],
                x[:, :, i0 + di:i1 + di, j0 + dj:j1 + dj],
            )
    return gk


def parc_oh(x: np.ndarray, k: OversizedKernelPair) -> np.ndarray:
    """Vertical oversized pass: ``Y[i,j] = sum_s k_h[s] X[i+s, j]``."""
    _check_channels(x, k.channels)
    h = x.shape[2]
    if k.k_h.shape[1] != 2 * h - 1:
        raise DimensionError(
            f"k_h length {k.k_h.shape[1]} is bound to H={k.size[0]}, input has H={h}"
        )
    return _correlate(x, k.k_h[:, :, None], h - 1, 0)


def parc_ow(y: np.ndarray, k: OversizedKernelPair) -> np.ndarray:
    """Horizontal oversized pass; adds the pair's bias if it has one."""
    _check_channels(y, k.channels)
    w = y.shape[3]
    if k.k_w.shape[1] != 2 * w - 1:
        raise DimensionError(
            f"k_w length {k.k_w.shape[1]} is bound to W={k.size[1]}, input has W={w}"
        )
    out = _correlate(y, k.k_w[:, None, :], 0, w - 1)
    if k.bias is not None:
        out += k.bias[None, :, None, None]
    return out


def parc_oversized(x: np.ndarray, k: OversizedKernelPair) -> np.ndarray:
    """H-then-W composition. The W-then-H order agrees up to rounding."""
    return parc_ow(parc_oh(x, k), k)


def parc_oversized_wh(x: np.ndarray, k: OversizedKernelPair) -> np.ndarray:
    """W-then-H order, bias applied last."""
    nobias = OversizedKernelPair(k.k_h, k.k_w)
    out = parc_oh(parc_ow(x, nobias), nobias)
    if k.bias is not None:
        out += k.bias[None, :, None, None]
    return out


def dwconv7x7(x: np.ndarray, k: LocalKernel7) -> np.ndarray:
    _check_channels(x, k.channels)
    out = _correlate(x, k.k, 3, 3)
    if k.bias is not None:
        out += k.bias[None, :, None, None]
    return out


def dense_dwconv2d(x: np.ndarray, k: Dense2DKernel) -> np.ndarray:
    """Depthwise 2D correlation with 'same' zero padding."""
    _check_channels(x, k.channels)
    ph, pw = k.padding
    out = _correlate(x, k.k, ph, pw)
    if k.bias is not None:
        out += k.bias[None, :, None, None]
    return out


def compose_2d(k: OversizedKernelPair) -> Dense2DKernel:
    """Rank-1 dense kernel ``K[c,s,t] = k_h[c,s] * k_w[c,t]`` (bias carried over)."""
    return Dense2DKernel(k.k_h[:, :, None] * k.k_w[:, None, :], k.bias)


def embed_center(k: Dense2DKernel, kh: int, kw: int) -> Dense2DKernel:
    """Zero-extend a kernel to at least ``kh x kw`` keeping centers aligned."""
    c, h0, w0 = k.k.shape
    kh, kw = max(kh, h0), max(kw, w0)
    out = np.zeros((c, kh, kw), dtype=k.k.dtype)
    top, left = (kh - h0) // 2, (kw - w0) // 2
    out[:, top:top + h0, left:left + w0] = k.k
    return Dense2DKernel(out, k.bias)


def fuse_local_global(k2d: Dense2DKernel, k7: LocalKernel7) -> Dense2DKernel:
    """Add the 7x7 kernel into the center window of a larger dense kernel."""
    c, kh, kw = k2d.k.shape
    if kh < 7 or kw < 7:
        raise DimensionError(f"dense kernel {kh}x{kw} is smaller than 7x7")
    if k7.channels != c:
        raise DimensionError("channel counts differ")
    fused = k2d.k.copy()
    ch, cw = (kh - 1) // 2, (kw - 1) // 2
    fused[:, ch - 3:ch + 4, cw - 3:cw + 4] += k7.k
    if k2d.bias is None and k7.bias is None:
        bias = None
    else:
        bias = np.zeros(c, dtype=fused.dtype)
        for b in (k2d.bias, k7.bias):
            if b is not None:
                bias = bias + b
    return Dense2DKernel(fused, bias)


def _resize_1d(k: np.ndarray, length: int) -> np.ndarray:
    old = k.shape[1]
    if old == length:
        return k.copy()
    if old == 1:
        return np.repeat(k, length, axis=1)
    if length == 1:
        # a single tap sits on the old center
        return k[:, (old - 1) // 2:(old - 1) // 2 + 1].copy()
    # align corners: new tap i sits at old position i*(old-1)/(length-1)
    pos = np.arange(length) * ((old - 1) / (length - 1))
    lo = np.minimum(np.floor(pos).astype(np.int64), old - 2)
    frac = (pos - lo).astype(k.dtype)
    return k[:, lo] * (1 - frac) + k[:, lo + 1] * frac


def resize_kernel_linear(k: OversizedKernelPair, new_h: int, new_w: int) -> OversizedKernelPair:
    """Zoom both 1D kernels to lengths ``2*new_h - 1`` and ``2*new_w - 1``."""
    if new_h < 1 or new_w < 1:
        raise ValueError("target feature size must be at least 1x1")
    return OversizedKernelPair(
        _resize_1d(k.k_h, 2 * new_h - 1), _resize_1d(k.k_w, 2 * new_w - 1), k.bias
    )


# backward passes -----------------------------------------------------------

def _check_grad(g, x):
    if g.shape != x.shape:
        raise DimensionError(f"grad shape {g.shape} != forward output shape {x.shape}")


def parc_oh_vjp(g: np.ndarray, x: np.ndarray, k: OversizedKernelPair):
    """Returns ``(grad_x, grad_k_h)``; grad_x uses the index-flipped kernel."""
    _check_grad(g, x)
    h = x.shape[2]
    gx = _correlate(g, k.k_h[:, ::-1, None], h - 1, 0)
    gk = _kernel_grad(g, x, 2 * h - 1, 1, h - 1, 0)[:, :, 0]
    return gx, gk


def parc_ow_vjp(g: np.ndarray, y: np.ndarray, k: OversizedKernelPair):
    """Returns ``(grad_y, grad_k_w, grad_bias)``; grad_bias is None without bias."""
    _check_grad(g, y)
    w = y.shape[3]
    gy = _correlate(g, k.k_w[:, None, ::-1], 0, w - 1)
    gk = _kernel_grad(g, y, 1, 2 * w - 1, 0, w - 1)[:, 0, :]
    gb = g.sum(axis=(0, 2, 3)) if k.bias is not None else None
    return gy, gk, gb


def parc_oversized_vjp(g: np.ndarray, x: np.ndarray, k: OversizedKernelPair):
    """Returns ``(grad_x, grad_k_h, grad_k_w, grad_bias)``."""
    y = parc_oh(x, k)
    gy, gkw, gb = parc_ow_vjp(g, y, k)
    gx, gkh = parc_oh_vjp(gy, x, k)
    return gx, gkh, gkw, gb


def dwconv7x7_vjp(g: np.ndarray, x: np.ndarray, k: LocalKernel7):
    """Returns ``(grad_x, grad_k, grad_bias)``."""
    _check_grad(g, x)
    gx = _correlate(g, k.k[:, ::-1, ::-1], 3, 3)
    gk = _kernel_grad(g, x, 7, 7, 3, 3)
    gb = g.sum(axis=(0, 2, 3)) if k.bias is not None else None
    return gx, gk, gb


def dense_dwconv2d_vjp(g: np.ndarray, x: np.ndarray, k: Dense2DKernel):
    _check_grad(g, x)
    ph, pw = k.padding
    gx = _correlate(g, k.k[:, ::-1, ::-1], ph, pw)
    gk = _kernel_grad(g, x, k.k.shape[1], k.k.shape[2], ph, pw)
    gb = g.sum(axis=(0, 2, 3)) if k.bias is not None else None
    return gx, gk, gb
