"""Image quality metrics on [C,H,W] or [H,W] float arrays in [0, 1]."""

from __future__ import annotations

import numpy as np

PSNR_CAP = 99.0


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes {a.shape} and {b.shape} differ")
    if a.ndim not in (2, 3):
        raise ValueError(f"expected [H,W] or [C,H,W], got {a.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images report 99.0."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(10.0 * np.log10(max_value * max_value / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def _to_gray(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=0) if img.ndim == 3 else img


def ssim(a: np.ndarray, b: np.ndarray, max_value: float = 1.0) -> float:
    """Structural similarity with the standard 11x11 Gaussian window
    (sigma 1.5, K1=0.01, K2=0.03), averaged over valid positions.

    Color images are reduced to grayscale by the channel mean first.
    """
    a, b = _check_pair(a, b)
    ga, gb = _to_gray(a), _to_gray(b)
    size = 11
    if min(ga.shape) < size:
        raise ValueError(f"image {ga.shape} smaller than the {size}x{size} "
                         "window")
    win = _gaussian_window(size, 1.5)
    wa = np.lib.stride_tricks.sliding_window_view(ga, (size, size))
    wb = np.lib.stride_tricks.sliding_window_view(gb, (size, size))
    mu_a = (wa * win).sum(axis=(-2, -1))
    mu_b = (wb * win).sum(axis=(-2, -1))
    ex_aa = (wa * wa * win).sum(axis=(-2, -1))
    ex_bb = (wb * wb * win).sum(axis=(-2, -1))
    ex_ab = (wa * wb * win).sum(axis=(-2, -1))
    var_a = ex_aa - mu_a * mu_a
    var_b = ex_bb - mu_b * mu_b
    cov = ex_ab - mu_a * mu_b
    c1 = (0.01 * max_value) ** 2
    c2 = (0.03 * max_value) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
