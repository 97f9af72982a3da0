"""Reference and no-reference image quality metrics (plain numpy)."""

from __future__ import annotations

import numpy as np


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def _filter_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(img, ((ph, ph), (pw, pw)), mode="reflect")
    out = np.zeros_like(img)
    for dy in range(kh):
        for dx in range(kw):
            out += kernel[dy, dx] * padded[dy:dy + img.shape[0], dx:dx + img.shape[1]]
    return out


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical inputs return +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("inputs must share a shape")
    if not (peak > 0 and np.isfinite(peak)):
        raise ValueError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean local structural similarity, 11x11 Gaussian window, sigma 1.5,
    stabilizers C1 = (0.01 peak)^2 and C2 = (0.03 peak)^2."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError("inputs must be 2-d images of one shape")
    if not (peak > 0 and np.isfinite(peak)):
        raise ValueError("peak must be positive")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    win = _gaussian_window()
    mu_a = _filter_same(a, win)
    mu_b = _filter_same(b, win)
    var_a = _filter_same(a * a, win) - mu_a * mu_a
    var_b = _filter_same(b * b, win) - mu_b * mu_b
    cov = _filter_same(a * b, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def entropy(img: np.ndarray, bins: int = 256) -> float:
    """Shannon entropy (bits) of the value histogram over [min, max]."""
    img = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise ValueError("entropy input must be finite")
    if bins < 2:
        raise ValueError("need at least two bins")
    lo, hi = float(img.min()), float(img.max())
    if hi <= lo:
        return 0.0
    hist, _ = np.histogram(img, bins=bins, range=(lo, hi))
    p = hist / hist.sum()
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())
