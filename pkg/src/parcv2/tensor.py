"""Dense NCHW tensor substrate.

Feature maps are plain contiguous ``numpy.ndarray`` objects of shape
``(N, C, H, W)``. float32 is the working precision; float64 is used by the
gradient checks. Every op here is a pure function of its inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

LN_EPS = 1e-6


class DimensionError(ValueError):
    """Raised when tensor shapes or channel counts do not line up."""


class NumericError(ArithmeticError):
    """Raised when an operation produces NaN or Inf."""


def as_feature_map(x, dtype=None) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=dtype)
    if x.ndim != 4:
        raise DimensionError(f"expected (N, C, H, W), got shape {x.shape}")
    return x


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} contains non-finite values")
    return x


@dataclass(frozen=True)
class PointwiseParams:
    """1x1 convolution: ``weight`` is (C_out, C_in), ``bias`` is (C_out,)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"pointwise weight {self.weight.shape} vs bias {self.bias.shape}"
            )

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def num_params(self) -> int:
        return self.weight.size + self.bias.size

    @classmethod
    def identity(cls, c: int, dtype=np.float32) -> PointwiseParams:
        return cls(np.eye(c, dtype=dtype), np.zeros(c, dtype=dtype))

    @classmethod
    def zeros(cls, c_out: int, c_in: int, dtype=np.float32) -> PointwiseParams:
        return cls(np.zeros((c_out, c_in), dtype), np.zeros(c_out, dtype))


class Rng:
    """Seeded normal generator with a fixed, documented transform.

    Uniform doubles come from numpy's PCG64 bit generator (53-bit mantissa
    construction). Normals use the basic Box-Muller transform: each pair of
    uniforms ``(u1, u2)`` yields ``r*cos(2 pi u2), r*sin(2 pi u2)`` with
    ``r = sqrt(-2 ln(1 - u1))``. The output for a given seed and call
    sequence therefore does not depend on numpy's own normal sampler.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return low + (high - low) * self._gen.random(shape)

    def standard_normal(self, shape) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u = self._gen.random((m, 2))
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((m, 2))
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        return z.reshape(-1)[:n].reshape(shape)

    def truncated_normal(self, shape, std: float, bound: float = 2.0) -> np.ndarray:
        """Normal(0, std) restricted to ``[-bound*std, bound*std]`` by redrawing."""
        z = self.standard_normal(shape).reshape(-1)
        bad = np.flatnonzero(np.abs(z) > bound)
        while bad.size:
            z[bad] = self.standard_normal(bad.size)
            bad = bad[np.abs(z[bad]) > bound]
        return std * z.reshape(shape)

    def signed_uniform(self, shape, low: float = 0.1, high: float = 1.0) -> np.ndarray:
        """Values with magnitude in ``[low, high]`` and random sign."""
        mag = self.uniform(shape, low, high)
        sign = np.where(self._gen.random(shape) < 0.5, -1.0, 1.0)
        return mag * sign


def random_normal(shape, rng: Rng, std: float = 1.0, dtype=np.float32) -> np.ndarray:
    if std < 0:
        raise ValueError("std must be non-negative")
    return (std * rng.standard_normal(shape)).astype(dtype)


def pad_zero(x: np.ndarray, top: int, bottom: int, left: int, right: int) -> np.ndarray:
    if min(top, bottom, left, right) < 0:
        raise ValueError("padding must be non-negative")
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + top + bottom, w + left + right), dtype=x.dtype)
    out[:, :, top:top + h, left:left + w] = x
    return out


def pointwise_conv(x: np.ndarray, p: PointwiseParams) -> np.ndarray:
    if x.shape[1] != p.c_in:
        raise DimensionError(f"pointwise expects {p.c_in} channels, got {x.shape[1]}")
    # einsum without BLAS keeps the per-element reduction order fixed
    out = np.einsum("oc,nchw->nohw", p.weight, x)
    out += p.bias[None, :, None, None]
    return out


def pointwise_vjp(g: np.ndarray, x: np.ndarray, p: PointwiseParams):
    """Returns ``(grad_x, grad_weight, grad_bias)``."""
    if g.shape != (x.shape[0], p.c_out) + x.shape[2:]:
        raise DimensionError(f"grad shape {g.shape} does not match output")
    gx = np.einsum("oc,nohw->nchw", p.weight, g)
    gw = np.einsum("nohw,nchw->oc", g, x)
    return gx, gw, g.sum(axis=(0, 2, 3))


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    # erfc keeps the negative tail accurate where 1 + erf(.) cancels
    return (0.5 * x * erfc(-x * _SQRT1_2)).astype(x.dtype, copy=False)


def gelu_vjp(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * erfc(-x * _SQRT1_2)
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (g * (cdf + x * pdf)).astype(x.dtype, copy=False)


def channel_layernorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      eps: float = LN_EPS) -> np.ndarray:
    """Normalize across channels independently at every (n, h, w)."""
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError("gamma/beta length must equal channel count")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    xhat = xc / np.sqrt(var + eps)
    return xhat * gamma[None, :, None, None] + beta[None, :, None, None]


def channel_layernorm_vjp(g, x, gamma, eps: float = LN_EPS):
    """Returns ``(grad_x, grad_gamma, grad_beta)``."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    ggamma = (g * xhat).sum(axis=(0, 2, 3))
    gbeta = g.sum(axis=(0, 2, 3))
    gxhat = g * gamma[None, :, None, None]
    gx = rstd * (gxhat - gxhat.mean(axis=1, keepdims=True)
                 - xhat * (gxhat * xhat).mean(axis=1, keepdims=True))
    return gx, ggamma, gbeta


def vector_layernorm(v: np.ndarray, gamma, beta, eps: float = LN_EPS) -> np.ndarray:
    """Layer norm over the last axis of an (N, C) matrix."""
    mu = v.mean(axis=-1, keepdims=True)
    vc = v - mu
    var = (vc * vc).mean(axis=-1, keepdims=True)
    return vc / np.sqrt(var + eps) * gamma + beta


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise DimensionError("cannot pool an empty spatial extent")
    return x.mean(axis=(2, 3))


def global_avg_pool_vjp(g: np.ndarray, x_shape) -> np.ndarray:
    n, c, h, w = x_shape
    return np.broadcast_to(g[:, :, None, None] / (h * w), x_shape).copy()
