"""Fidelity metrics, latent scaling statistics and the dual-domain MSE loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import signal

from .imagecore import _RGBImage
from .ptp import PtpParams, ptp_forward, ptp_jacobian

PSNR_CAP = 100.0


class DegenerateBatchError(ValueError):
    """The latent batch has zero spread, so it cannot be rescaled."""


def _arr(x) -> np.ndarray:
    a = x.data if isinstance(x, _RGBImage) else getattr(x, "data", x)
    return np.asarray(a, dtype=np.float64)


def _same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def mse(a, b) -> float:
    a, b = _arr(a), _arr(b)
    _same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR over all channels jointly; identical inputs report ``PSNR_CAP``."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP
    return float(10.0 * np.log10(peak**2 / err))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(a: np.ndarray, b: np.ndarray, data_range: float = 1.0, k1: float = 0.01, k2: float = 0.03,
             win: np.ndarray | None = None) -> np.ndarray:
    """SSIM index of every fully-contained 11x11 window of two 2-D planes."""
    win = _gaussian_window() if win is None else win
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def filt(x):
        return signal.correlate(x, win, mode="valid", method="direct")

    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a * mu_a
    sbb = filt(b * b) - mu_b * mu_b
    sab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return num / den


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM per channel (valid windows only), averaged over channels."""
    a, b = _arr(a), _arr(b)
    _same_shape(a, b)
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise ValueError("SSIM needs images of at least 11x11")
    if a.ndim == 2:
        return float(ssim_map(a, b, data_range).mean())
    return float(np.mean([ssim_map(a[..., c], b[..., c], data_range).mean() for c in range(a.shape[2])]))


def luma(x) -> np.ndarray:
    a = _arr(x)
    return a @ np.array([0.299, 0.587, 0.114])


def compare(gt, pred, *, luma_only: bool = False) -> dict:
    a, b = (_arr(gt), _arr(pred)) if not luma_only else (luma(gt), luma(pred))
    _same_shape(a, b)
    exact = bool(np.array_equal(a, b))
    return {"psnr": psnr(a, b), "ssim": ssim(a, b), "exact_match": exact}


# -- latent statistics ---------------------------------------------------------

def latent_scaling_factor(z) -> tuple[float, float]:
    """Grand mean and standard deviation over every (b, c, h, w) element."""
    z = np.asarray(z)
    if z.ndim != 4:
        raise ValueError(f"latent batch must be 4-D (b, c, h, w), got shape {z.shape}")
    if z.size < 2:
        raise ValueError("latent batch needs at least two elements")
    flat = z.astype(np.float64).ravel()
    if not np.all(np.isfinite(flat)):
        raise ValueError("latent batch holds non-finite values")
    mu = float(np.mean(flat))
    var = float(np.mean((flat - mu) ** 2))
    return mu, float(np.sqrt(var))


def rescale_latents(z, sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise DegenerateBatchError(f"cannot rescale by sigma={sigma}; the batch is constant")
    z = np.asarray(z)
    return (z.astype(np.float64) / sigma).astype(np.float32)


# -- dual-domain loss ------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    raw: float = 1.0
    srgb: float = 1.0

    def __post_init__(self):
        if self.raw < 0 or self.srgb < 0:
            raise ValueError("loss weights must be >= 0")
        if self.raw == 0 and self.srgb == 0:
            raise ValueError("at least one loss weight must be positive")


class LossResult(NamedTuple):
    value: float
    grad: np.ndarray
    mask_fraction: float


def dual_domain_mse(pred, gt, p: PtpParams, w: LossWeights = LossWeights()) -> LossResult:
    """``w.raw * MSE(pred, gt) + w.srgb * MSE(ptp(pred), ptp(gt))`` and its gradient.

    The sRGB term is back-propagated through the per-pixel PTP Jacobian;
    pixels with an active clamp get zero gradient through that clamp and are
    counted in ``mask_fraction``.
    """
    x, y = _arr(pred), _arr(gt)
    _same_shape(x, y)
    n = x.size
    diff = x - y
    fx, fy = ptp_forward(x, p), ptp_forward(y, p)
    sdiff = fx - fy
    value = w.raw * float(np.mean(diff**2)) + w.srgb * float(np.mean(sdiff**2))
    grad = (2.0 * w.raw / n) * diff
    mask_fraction = 0.0
    if w.srgb:
        jac, saturated = ptp_jacobian(x, p)
        grad = grad + (2.0 * w.srgb / n) * np.einsum("...ij,...i->...j", jac, sdiff)
        mask_fraction = float(saturated.mean())
    return LossResult(value, grad, mask_fraction)
