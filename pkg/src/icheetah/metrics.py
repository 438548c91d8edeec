"""Plain-domain image quality metrics for round-trip evaluation.

All metrics compare uint8-range images (peak value 255).  PSNR of identical
images is positive infinity; structural similarity uses the global
single-window form (one mean/variance/covariance over the whole image,
channel-averaged), not the sliding-window variant.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, DomainError

_PEAK = 255.0
_C1 = (0.01 * _PEAK) ** 2
_C2 = (0.03 * _PEAK) ** 2


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(getattr(a, "pixels", a), dtype=np.float64)
    y = np.asarray(getattr(b, "pixels", b), dtype=np.float64)
    # a bare (h, w) array and a single-channel (1, h, w) image are the same thing
    if x.ndim == 2:
        x = x[None]
    if y.ndim == 2:
        y = y[None]
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.size == 0:
        raise DimensionError("empty image")
    return x, y


def mse(a, b) -> float:
    """Mean squared error over all pixels and channels."""
    x, y = _pair(a, b)
    return float(np.mean((x - y) ** 2))


def psnr_from_mse(value: float) -> float:
    """Peak signal-to-noise ratio in dB for a given MSE against peak 255."""
    if value < 0:
        raise DomainError(f"mean squared error cannot be negative, got {value}")
    if value == 0:
        return math.inf
    return 10.0 * math.log10(_PEAK * _PEAK / value)


def psnr(a, b) -> float:
    return psnr_from_mse(mse(a, b))


def ssim(a, b) -> float:
    """Global single-window structural similarity, averaged over channels."""
    x, y = _pair(a, b)
    if x.ndim == 2:
        x = x[None]
        y = y[None]
    elif x.ndim != 3:
        raise DimensionError(f"expected 2-D or 3-D image, got shape {x.shape}")
    scores = []
    for c in range(x.shape[0]):
        xc, yc = x[c], y[c]
        mx, my = xc.mean(), yc.mean()
        vx, vy = xc.var(), yc.var()
        cov = float(np.mean((xc - mx) * (yc - my)))
        num = (2 * mx * my + _C1) * (2 * cov + _C2)
        den = (mx * mx + my * my + _C1) * (vx + vy + _C2)
        scores.append(num / den)
    return float(np.mean(scores))
