"""Image quality metrics on linear [0, 1] images of shape (H, W, 3).

PSNR uses a unit peak.  SSIM uses an 11x11 Gaussian window (sigma 1.5),
valid-region statistics (no padding), averaged over channels.  ssim_grad
returns the analytic gradient with respect to the first image so the
training loss can backpropagate through it; correctness is pinned by
finite-difference tests.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve2d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) images, got {a.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) against a unit peak; +inf for identical images."""
    _check_pair(a, b)
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # kernel is symmetric, so correlation and convolution coincide
    return convolve2d(img, kernel, mode="valid")


def _ssim_channel_stats(x: np.ndarray, y: np.ndarray, kernel: np.ndarray):
    mu_x = _filter_valid(x, kernel)
    mu_y = _filter_valid(y, kernel)
    sxx = _filter_valid(x * x, kernel) - mu_x ** 2
    syy = _filter_valid(y * y, kernel) - mu_y ** 2
    sxy = _filter_valid(x * y, kernel) - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + C1
    a2 = 2.0 * sxy + C2
    b1 = mu_x ** 2 + mu_y ** 2 + C1
    b2 = sxx + syy + C2
    return mu_x, mu_y, sxy, a1, a2, b1, b2


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    _check_pair(a, b)
    h, w = a.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    kernel = gaussian_window()
    total = 0.0
    for ch in range(3):
        x = a[:, :, ch].astype(np.float64)
        y = b[:, :, ch].astype(np.float64)
        _, _, _, a1, a2, b1, b2 = _ssim_channel_stats(x, y, kernel)
        total += float(np.mean((a1 * a2) / (b1 * b2)))
    return total / 3.0


def ssim_grad(a: np.ndarray, b: np.ndarray):
    """Returns (ssim value, d ssim / d a) with a the image being optimized.

    Per valid window S = A1*A2 / (B1*B2) with A1 = 2 mu_x mu_y + C1,
    A2 = 2 sigma_xy + C2, B1 = mu_x^2 + mu_y^2 + C1, B2 = sxx + syy + C2.
    The window statistics are valid-mode correlations with the Gaussian
    kernel, so their adjoints are full-mode convolutions back onto the
    pixel grid.
    """
    _check_pair(a, b)
    kernel = gaussian_window()
    grad = np.zeros_like(a, dtype=np.float64)
    total = 0.0
    for ch in range(3):
        x = a[:, :, ch].astype(np.float64)
        y = b[:, :, ch].astype(np.float64)
        mu_x, mu_y, _, a1, a2, b1, b2 = _ssim_channel_stats(x, y, kernel)
        d = b1 * b2
        s = (a1 * a2) / d
        total += float(np.mean(s))
        n = s.size * 3  # mean over windows and channels
        g = 1.0 / n
        ds_dmux = g * (2.0 * mu_y * a2 / d - s * 2.0 * mu_x / b1)
        ds_dsxx = g * (-s / b2)
        ds_dsxy = g * (2.0 * a1 / d)
        # x enters mu_x directly, sxx via G*(x^2) - mu_x^2, sxy via G*(xy) - mu_x mu_y
        field_mu = ds_dmux - 2.0 * ds_dsxx * mu_x - ds_dsxy * mu_y
        grad[:, :, ch] = (
            convolve2d(field_mu, kernel, mode="full")
            + 2.0 * x * convolve2d(ds_dsxx, kernel, mode="full")
            + y * convolve2d(ds_dsxy, kernel, mode="full")
        )
    return total / 3.0, grad
