"""PSNR and single-scale SSIM on the 0-255 scale."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import correlate2d

from .errors import UsageError
from .imageio import ImageBuffer

PEAK = 255.0
LUMA = np.array([0.299, 0.587, 0.114])


def _as_255(x) -> np.ndarray:
    if isinstance(x, ImageBuffer):
        return x.to_255()
    return np.asarray(x, dtype=np.float64)


def psnr(a, b, peak: float = PEAK) -> float:
    """``10 log10(peak^2 / MSE)``; identical inputs give ``math.inf``."""
    a, b = _as_255(a), _as_255(b)
    if a.shape != b.shape:
        raise UsageError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def to_luma(x: np.ndarray) -> np.ndarray:
    """Collapse ``(H, W, 3)`` RGB to BT.601 luma; gray passes through as 2-D."""
    if x.ndim == 3 and x.shape[2] == 3:
        return x @ LUMA
    if x.ndim == 3:
        return x[:, :, 0]
    return x


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(a, b, window_size: int = 11, sigma: float = 1.5,
             k1: float = 0.01, k2: float = 0.03, data_range: float = PEAK) -> np.ndarray:
    x, y = to_luma(_as_255(a)), to_luma(_as_255(b))
    if x.shape != y.shape:
        raise UsageError(f"ssim shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < window_size:
        raise UsageError(f"image {x.shape} is smaller than the {window_size}x{window_size} window")
    win = gaussian_window(window_size, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2

    def filt(img):
        return correlate2d(img, win, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = filt(x * x) - mu_xx
    var_y = filt(y * y) - mu_yy
    cov = filt(x * y) - mu_xy
    num = (2 * mu_xy + c1) * (2 * cov + c2)
    den = (mu_xx + mu_yy + c1) * (var_x + var_y + c2)
    return num / den


def ssim(a, b, **kwargs) -> float:
    """Mean SSIM over all valid window positions (Gaussian 11x11, sigma 1.5)."""
    return float(ssim_map(a, b, **kwargs).mean())
