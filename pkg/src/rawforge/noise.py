"""Heteroscedastic shot + read sensor noise on mosaiced frames."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .imagecore import NoiseParams, RawImage
from .rng import normal_field

__all__ = [
    "NoiseParams",
    "NoiseRanges",
    "add_shot_read_noise",
    "estimate_noise_curve",
    "noise_field",
    "sample_noise_params",
]


@dataclass(frozen=True)
class NoiseRanges:
    """Log-uniform shot coefficient; read variance tied to it by a noisy log-linear law."""

    shot_log_range: tuple = (math.log(1e-4), math.log(1e-2))
    read_slope: float = 2.18
    read_intercept: float = 1.20
    read_sigma: float = 0.26

    def __post_init__(self):
        lo, hi = (float(v) for v in self.shot_log_range)
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
            raise ValueError(f"invalid shot log range {self.shot_log_range}")
        if self.read_sigma < 0:
            raise ValueError("read_sigma must be >= 0")
        object.__setattr__(self, "shot_log_range", (lo, hi))

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseRanges":
        d = dict(d)
        if "shot_range" in d:
            lo, hi = d.pop("shot_range")
            if lo <= 0 or hi <= 0:
                raise ValueError("shot_range bounds must be positive")
            d["shot_log_range"] = (math.log(lo), math.log(hi))
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "shot_log_range": list(self.shot_log_range),
            "read_slope": self.read_slope,
            "read_intercept": self.read_intercept,
            "read_sigma": self.read_sigma,
        }


def sample_noise_params(rng: np.random.Generator, ranges: NoiseRanges = NoiseRanges()) -> NoiseParams:
    lo, hi = ranges.shot_log_range
    log_shot = rng.uniform(lo, hi) if hi > lo else lo
    log_read = ranges.read_slope * log_shot + ranges.read_intercept
    if ranges.read_sigma > 0:
        log_read += rng.normal(0.0, ranges.read_sigma)
    return NoiseParams(shot=math.exp(log_shot), read=math.exp(log_read))


def noise_field(x: np.ndarray, p: NoiseParams, seed: int, *, chunks: int = 1) -> np.ndarray:
    """Pre-clamp additive noise for signal ``x``, drawn in ``chunks`` row blocks.

    The draw for pixel ``i`` depends only on ``(seed, i)``, so the result is
    the same for any chunking.
    """
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    n = flat.size
    out = np.empty(n, dtype=np.float64)
    bounds = np.linspace(0, n, max(1, int(chunks)) + 1).astype(int)
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b > a:
            out[a:b] = normal_field(seed, b - a, offset=int(a))
    std = np.sqrt(p.read + p.shot * np.clip(flat, 0.0, None))
    return (out * std).reshape(x.shape)


def add_shot_read_noise(
    r: RawImage, p: NoiseParams, seed: int, *, clip: bool = True, chunks: int = 1
) -> RawImage:
    """``clamp(x + n)`` with ``n ~ N(0, read + shot * x)`` per pixel.

    ``clip=False`` returns the pre-clamp frame, marked ``preclip`` in its metadata.
    """
    if not isinstance(p, NoiseParams):
        p = NoiseParams(*p)
    meta = replace(r.require_meta(), noise=p, seed=int(seed), preclip=not clip)
    if p.shot == 0 and p.read == 0:
        return RawImage(r.data, meta)
    x = r.data.astype(np.float64)
    y = x + noise_field(x, p, seed, chunks=chunks)
    if clip:
        y = np.clip(y, 0.0, 1.0)
    return RawImage(y, meta)


def _residual_bins(raw: RawImage, gt: RawImage, n_bins: int, min_count: int):
    same_pattern = raw.meta is None or gt.meta is None or raw.pattern == gt.pattern
    if raw.data.shape != gt.data.shape or not same_pattern:
        raise ValueError("raw and gt must share dimensions and Bayer pattern")
    x = gt.data.astype(np.float64).ravel()
    res = raw.data.astype(np.float64).ravel() - x
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        hi = lo + 1e-12
    which = np.minimum(((x - lo) / (hi - lo) * n_bins).astype(int), n_bins - 1)
    counts = np.bincount(which, minlength=n_bins)
    populated = counts > 0
    if np.any(counts[populated] < min_count):
        raise ValueError(f"fewer than {min_count} samples in some intensity bin")
    keep = np.flatnonzero(populated)
    centers = np.bincount(which, weights=x, minlength=n_bins)[keep] / counts[keep]
    mean_res = np.bincount(which, weights=res, minlength=n_bins)[keep] / counts[keep]
    sq = np.bincount(which, weights=res * res, minlength=n_bins)[keep] / counts[keep]
    var = (sq - mean_res**2) * counts[keep] / np.maximum(counts[keep] - 1, 1)
    return centers, var, counts[keep]


def estimate_noise_curve(
    raw: RawImage, gt: RawImage, n_bins: int = 16, min_count: int = 100
) -> tuple[float, float]:
    """Fit ``var = read + shot * x`` to per-bin residual variance.

    Bins closer than three fitted standard deviations to 0 or 1 are dropped
    and the fit repeated, because clipping there shrinks the variance.
    Returns ``(shot, read)``.
    """
    centers, var, counts = _residual_bins(raw, gt, n_bins, min_count)
    if var.max() <= 0:
        return 0.0, 0.0
    keep = np.ones(centers.size, dtype=bool)
    coef = np.zeros(2)
    for _ in range(5):
        if keep.sum() < 2:
            raise ValueError("not enough unclipped intensity bins to fit a noise curve")
        a = np.stack([centers[keep], np.ones(keep.sum())], axis=1)
        # weight by the inverse standard error of each bin's variance
        w = np.sqrt(counts[keep]) / np.maximum(var[keep], 1e-30)
        coef, *_ = np.linalg.lstsq(a * w[:, None], var[keep] * w, rcond=None)
        sigma = np.sqrt(np.maximum(coef[0] * centers + coef[1], 0.0))
        new_keep = (centers > 3 * sigma) & (1.0 - centers > 3 * sigma)
        if new_keep.sum() < 2 or np.array_equal(new_keep, keep):
            break
        keep = new_keep
    shot, read = (float(max(c, 0.0)) for c in coef)
    return shot, read
