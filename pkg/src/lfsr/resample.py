"""Separable bicubic resampling with the Keys kernel (a = -0.5).

Both directions use the same 4-tap kernel on a center-aligned sample grid:
upsampling interpolates at fractional source positions, downsampling
evaluates the kernel on the stride-alpha grid (no extra anti-alias
prefilter; this is also the declared degradation operator). Boundaries
replicate. Supported factors: 1/4, 1/2, 2, 4.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

__all__ = ["bicubic_resize", "keys_kernel", "SUPPORTED_FACTORS"]

SUPPORTED_FACTORS = (Fraction(1, 4), Fraction(1, 2), Fraction(2), Fraction(4))

_A = -0.5


def keys_kernel(t: np.ndarray) -> np.ndarray:
    """Keys cubic convolution kernel with a = -0.5 (Catmull-Rom)."""
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    near = (_A + 2.0) * t3 - (_A + 3.0) * t2 + 1.0
    far = _A * t3 - 5.0 * _A * t2 + 8.0 * _A * t - 4.0 * _A
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _axis_weights(n_in: int, factor: Fraction):
    n_out_f = n_in * factor
    if n_out_f.denominator != 1:
        raise ValueError(
            f"bicubic_resize: extent {n_in} not divisible for factor {factor}"
        )
    n_out = int(n_out_f)
    j = np.arange(n_out, dtype=np.float64)
    src = (j + 0.5) / float(factor) - 0.5
    base = np.floor(src).astype(np.int64)
    taps = base[:, None] + np.arange(-1, 3)[None, :]
    wts = keys_kernel(src[:, None] - taps)
    idx = np.clip(taps, 0, n_in - 1)  # replicate boundary
    return idx, wts


def _resize_axis(arr: np.ndarray, axis: int, factor: Fraction) -> np.ndarray:
    idx, wts = _axis_weights(arr.shape[axis], factor)
    moved = np.moveaxis(arr, axis, 0)
    out = np.zeros((idx.shape[0],) + moved.shape[1:], dtype=np.float64)
    for tap in range(4):
        w = wts[:, tap].reshape((-1,) + (1,) * (moved.ndim - 1))
        out += w * moved[idx[:, tap]]
    return np.moveaxis(out, 0, axis)


def _coerce_factor(factor) -> Fraction:
    f = Fraction(factor).limit_denominator(16)
    if f not in SUPPORTED_FACTORS:
        raise ValueError(
            f"bicubic_resize: unsupported factor {factor} (use 1/4, 1/2, 2 or 4)"
        )
    return f


def bicubic_resize(x: np.ndarray, factor) -> np.ndarray:
    """Resize the spatial extents of an image or light field.

    Accepts (H, W), (H, W, C), or a light field (..., U, V, H, W, C) whose
    views are resized independently; the result has the input's dtype.
    """
    f = _coerce_factor(factor)
    x = np.asarray(x)
    if x.ndim < 2:
        raise ValueError(f"bicubic_resize: need at least 2 extents, got {x.shape}")
    spatial = (0, 1) if x.ndim == 2 else (x.ndim - 3, x.ndim - 2)
    out = x.astype(np.float64)
    out = _resize_axis(out, spatial[0], f)
    out = _resize_axis(out, spatial[1], f)
    return out.astype(x.dtype, copy=False)
