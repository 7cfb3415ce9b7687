"""Independent ground truth: literal nested-loop convolution, a circular
(wrap-around) reference convolution, central finite differences,
equivalence reports and a receptive-field probe.

Nothing here imports the production convolution code. The loop nests are
compiled with numba only so the randomized suites finish in reasonable
time; they are written as the plain summation, one output element and one
tap at a time.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np

from .tensor import DimensionError, NumericError

ZERO = 0
CIRCULAR = 1


@numba.njit(cache=True)
def _direct_sum(x, k, top, left, out_h, out_w, mode):
    n, c, h, w = x.shape
    kh, kw = k.shape[1], k.shape[2]
    out = np.zeros((n, c, out_h, out_w), dtype=np.float64)
    for b in range(n):
        for ch in range(c):
            for i in range(out_h):
                for j in range(out_w):
                    acc = 0.0
                    for a in range(kh):
                        for t in range(kw):
                            r = i + a - top
                            q = j + t - left
                            if mode == CIRCULAR:
                                r = r % h
                                q = q % w
                            elif r < 0 or r >= h or q < 0 or q >= w:
                                continue
                            acc += k[ch, a, t] * x[b, ch, r, q]
                    out[b, ch, i, j] = acc
    return out


def naive_conv_oracle(x, kernel, padding, mode: str = "zero") -> np.ndarray:
    """Direct-sum depthwise correlation, accumulated in float64.

    ``kernel`` is (C, K) for a vertical 1D kernel when ``padding`` is
    ``(top, bottom, 0, 0)``, (C, 1, K) for horizontal, or (C, Kh, Kw) dense.
    A 2D (C, K) kernel is treated as vertical. ``padding`` is
    ``(top, bottom, left, right)``. In circular mode indices wrap modulo the
    spatial extent instead of reading zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim == 2:
        k = k[:, :, None]
    if x.ndim != 4 or k.ndim != 3 or k.shape[0] != x.shape[1]:
        raise DimensionError(f"input {x.shape} and kernel {k.shape} do not match")
    top, bottom, left, right = (int(v) for v in padding)
    out_h = x.shape[2] + top + bottom - k.shape[1] + 1
    out_w = x.shape[3] + left + right - k.shape[2] + 1
    if out_h < 1 or out_w < 1:
        raise DimensionError("padding too small for this kernel")
    m = {"zero": ZERO, "circular": CIRCULAR}[mode]
    return _direct_sum(np.ascontiguousarray(x), np.ascontiguousarray(k), top, left, out_h, out_w, m)


def oversized_oracle(x, k_h, k_w, bias=None) -> np.ndarray:
    """Vertical then horizontal zero-padded pass written as direct sums."""
    h, w = x.shape[2], x.shape[3]
    if k_h.shape[1] != 2 * h - 1 or k_w.shape[1] != 2 * w - 1:
        raise DimensionError("oversized kernel lengths must be 2H-1 and 2W-1")
    y = naive_conv_oracle(x, k_h, (h - 1, h - 1, 0, 0))
    z = naive_conv_oracle(y, np.asarray(k_w)[:, None, :], (0, 0, w - 1, w - 1))
    if bias is not None:
        z = z + np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return z


def circular_conv_reference(x, k_h, k_w) -> np.ndarray:
    """Global circular depthwise convolution with length-H and length-W kernels."""
    h, w = x.shape[2], x.shape[3]
    if k_h.shape[1] != h or k_w.shape[1] != w:
        raise DimensionError("circular kernels must have length H and W exactly")
    top, left = (h - 1) // 2, (w - 1) // 2
    y = naive_conv_oracle(x, k_h, (top, h - 1 - top, 0, 0), mode="circular")
    return naive_conv_oracle(y, np.asarray(k_w)[:, None, :], (0, 0, left, w - 1 - left),
                             mode="circular")


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function, element by element (float64)."""
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-6, 1e-4]")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        fp = float(f(x))
        flat[idx] = orig - eps
        fm = float(f(x))
        flat[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at element {idx}")
        gflat[idx] = (fp - fm) / (2 * eps)
    return grad


def _central_vjp(forward, x, cot, eps):
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        fp = np.asarray(forward(x), dtype=np.float64)
        flat[idx] = orig - eps
        fm = np.asarray(forward(x), dtype=np.float64)
        flat[idx] = orig
        diff = fp - fm
        if not np.all(np.isfinite(diff)):
            raise NumericError(f"non-finite function value at element {idx}")
        gflat[idx] = np.sum(cot * diff) / (2 * eps)
    return grad


def finite_diff_vjp(forward: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                    cotangent: np.ndarray, eps: float = 1e-5,
                    richardson: bool = False) -> np.ndarray:
    """Central differences of ``sum(cotangent * forward(x))``.

    The perturbed outputs are subtracted before contracting with the
    cotangent, so untouched output entries cancel exactly instead of adding
    round-off from the full sum. With ``richardson`` the steps ``eps`` and
    ``eps/2`` are combined as ``(4 D(eps/2) - D(eps)) / 3``, cancelling the
    O(eps^2) truncation term; both steps must lie in [1e-6, 1e-4].
    """
    lo = 2e-6 if richardson else 1e-6
    if not lo <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [{lo:g}, 1e-4]")
    x = np.array(x, dtype=np.float64)
    cot = np.asarray(cotangent, dtype=np.float64)
    d = _central_vjp(forward, x, cot, eps)
    if not richardson:
        return d
    return (4 * _central_vjp(forward, x, cot, eps / 2) - d) / 3


def max_rel_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


@dataclass(frozen=True)
class EquivalenceReport:
    max_abs_diff: float
    max_rel_diff: float
    argmax_location: tuple[int, ...]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_abs_diff <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "max_abs_diff": self.max_abs_diff,
            "max_rel_diff": self.max_rel_diff,
            "argmax_location": list(self.argmax_location),
            "tolerance": self.tolerance,
            "pass": self.passed,
        }


def check_equivalence(a, b, tol: float) -> EquivalenceReport:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    if diff.size == 0:
        return EquivalenceReport(0.0, 0.0, (), tol)
    loc = tuple(int(i) for i in np.unravel_index(int(np.argmax(diff)), diff.shape))
    return EquivalenceReport(float(diff[loc]), max_rel_error(a, b), loc, tol)


def receptive_field_probe(vjp: Callable[[np.ndarray], np.ndarray], shape) -> np.ndarray:
    """Boolean (H*W, H*W) matrix: entry [o, i] is True when output position o
    depends on input position i, read off one-hot cotangents pushed through
    ``vjp`` (grad_out -> grad_in). ``shape`` is (1, 1, H, W)."""
    n, c, h, w = shape
    if n != 1 or c != 1:
        raise DimensionError("probe expects a single-channel, single-item shape")
    dep = np.zeros((h * w, h * w), dtype=bool)
    for o in range(h * w):
        cot = np.zeros(shape)
        cot[0, 0, o // w, o % w] = 1.0
        dep[o] = np.abs(np.asarray(vjp(cot))).reshape(-1) > 0
    return dep
