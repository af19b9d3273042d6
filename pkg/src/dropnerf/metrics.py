"""PSNR and SSIM for float images in [0, 1]."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image sizes differ: {a.shape} vs {b.shape}")
    return a, b


def _psnr_from_mse(mse: float) -> float:
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / mse)))


def psnr(a, b) -> float:
    a, b = _check_pair(a, b)
    return _psnr_from_mse(float(np.mean((a - b) ** 2)))


def masked_psnr(a, b, region) -> float:
    """PSNR over the pixels where ``region`` is 1 (all channels of those pixels)."""
    a, b = _check_pair(a, b)
    region = np.asarray(region).astype(bool)
    if region.shape != a.shape[:2]:
        raise ValueError("region size does not match the images")
    if not region.any():
        raise ValueError("region selects no pixels")
    return _psnr_from_mse(float(np.mean((a[region] - b[region]) ** 2)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_channel(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    k = w.shape[0]

    def filt(img):
        return np.einsum("ijkl,kl->ij", sliding_window_view(img, (k, k)), w)

    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx * mx
    vy = filt(y * y) - my * my
    cxy = filt(x * y) - mx * my
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def ssim(a, b) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), valid window centers only."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    w = gaussian_window()
    maps = [_ssim_channel(a[..., c], b[..., c], w) for c in range(a.shape[2])]
    return float(np.mean(maps))
