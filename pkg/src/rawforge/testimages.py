"""Deterministic band-limited test scenes.

Scenes mimic natural-image statistics loosely: a luminance field made of
smoothed noise and soft-edged shapes, modulated by a slowly varying chroma
field so the colour channels are strongly correlated.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .imagecore import SrgbImage
from .rng import param_generator


def _normalize(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    return (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)


def band_limited_scene(seed: int, height: int = 128, width: int = 128) -> np.ndarray:
    """``(height, width, 3)`` float64 scene with samples in [0.05, 0.95]."""
    rng = param_generator(seed)
    texture = ndimage.gaussian_filter(rng.standard_normal((height, width)), rng.uniform(1.2, 2.0), mode="wrap")
    lum = 0.5 * _normalize(texture)

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    for _ in range(rng.integers(3, 7)):
        theta = rng.uniform(0, np.pi)
        offset = rng.uniform(0.2, 0.8) * (abs(np.cos(theta)) * width + abs(np.sin(theta)) * height)
        d = xx * np.cos(theta) + yy * np.sin(theta) - offset
        softness = rng.uniform(0.7, 1.4)
        lum += rng.uniform(-0.35, 0.35) * 0.5 * (1 + np.tanh(d / softness))
    lum = _normalize(lum)

    chroma = np.stack(
        [ndimage.gaussian_filter(rng.standard_normal((height, width)), 24.0, mode="wrap") for _ in range(3)], -1
    )
    chroma = 0.75 + 0.25 * (2 * _normalize(chroma) - 1) * rng.uniform(0.3, 1.0)
    tint = rng.uniform(0.75, 1.0, size=3)
    scene = lum[..., None] * chroma * tint
    return 0.05 + 0.9 * _normalize(scene)


def corpus(n: int, seed: int = 0, height: int = 128, width: int = 128) -> list[SrgbImage]:
    return [SrgbImage(band_limited_scene(seed * 100003 + i, height, width)) for i in range(n)]
