"""Bayer mosaicking and classical demosaicing for the four 2x2 phases."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy import ndimage

from .imagecore import BayerPattern, CaptureMetadata, LinearImage, RawImage

__all__ = [
    "BayerPattern",
    "channel_masks",
    "demosaic",
    "demosaic_bilinear",
    "demosaic_malvar",
    "mosaic",
    "pattern_at_offset",
    "prefilter",
]


def pattern_at_offset(pattern, dx: int, dy: int) -> BayerPattern:
    """Pattern seen when the origin moves to column ``dx``, row ``dy``."""
    q = BayerPattern.parse(pattern).value
    cells = [q[((r + dy) % 2) * 2 + (c + dx) % 2] for r in range(2) for c in range(2)]
    return BayerPattern("".join(cells))


def channel_index(pattern, height: int, width: int) -> np.ndarray:
    """Colour index (0=R, 1=G, 2=B) at every site of an ``height x width`` mosaic."""
    quad = BayerPattern.parse(pattern).quad
    return np.tile(quad, (height // 2 + 1, width // 2 + 1))[:height, :width]


def channel_masks(pattern, height: int, width: int) -> np.ndarray:
    """Boolean ``(3, H, W)`` masks of the sites sampling each colour."""
    idx = channel_index(pattern, height, width)
    return np.stack([idx == c for c in range(3)])


def mosaic(x: LinearImage, pattern, meta: CaptureMetadata | None = None) -> RawImage:
    a = x.data if isinstance(x, LinearImage) else np.asarray(x)
    h, w = a.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"mosaic needs even dimensions, got {w}x{h}")
    pattern = BayerPattern.parse(pattern)
    idx = channel_index(pattern, h, w)
    plane = np.take_along_axis(a, idx[..., None], axis=-1)[..., 0]
    meta = CaptureMetadata(pattern=pattern) if meta is None else meta
    if meta.pattern != pattern:
        meta = replace(meta, pattern=pattern)
    return RawImage(plane, meta)


_K_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4.0
_K_G = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4.0


def demosaic_bilinear(r: RawImage) -> LinearImage:
    """Average of the nearest same-colour neighbours.

    Uses normalized convolution, so at the borders only in-bounds neighbours
    are averaged.  Sampled sites pass through unchanged.
    """
    plane = r.data.astype(np.float64)
    masks = channel_masks(r.pattern, *plane.shape)
    out = np.empty(plane.shape + (3,), dtype=np.float64)
    for c in range(3):
        k = _K_G if c == 1 else _K_RB
        m = masks[c].astype(np.float64)
        num = ndimage.correlate(plane * m, k, mode="constant")
        den = ndimage.correlate(m, k, mode="constant")
        out[..., c] = np.where(masks[c], plane, num / den)
    return LinearImage(np.clip(out, 0.0, 1.0))


# Gradient-corrected 5x5 kernels (scaled by 1/8), centred on the target site.
_MALVAR_G_AT_RB = np.array([
    [0, 0, -1, 0, 0],
    [0, 0, 2, 0, 0],
    [-1, 2, 4, 2, -1],
    [0, 0, 2, 0, 0],
    [0, 0, -1, 0, 0],
]) / 8.0
# R at a green site in a red row (B at green in a blue row): horizontal neighbours.
_MALVAR_ROWNB = np.array([
    [0, 0, 0.5, 0, 0],
    [0, -1, 0, -1, 0],
    [-1, 4, 5, 4, -1],
    [0, -1, 0, -1, 0],
    [0, 0, 0.5, 0, 0],
]) / 8.0
_MALVAR_COLNB = _MALVAR_ROWNB.T
# R at B (B at R): diagonal neighbours.
_MALVAR_DIAG = np.array([
    [0, 0, -1.5, 0, 0],
    [0, 2, 0, 2, 0],
    [-1.5, 0, 6, 0, -1.5],
    [0, 2, 0, 2, 0],
    [0, 0, -1.5, 0, 0],
]) / 8.0


def demosaic_malvar(r: RawImage) -> LinearImage:
    """Malvar-He-Cutler gradient-corrected linear demosaicing.

    The mosaic is mirror-padded (reflection about the edge sample), which
    keeps every padded site on its original colour phase.
    """
    plane = r.data.astype(np.float64)
    h, w = plane.shape
    if h < 6 or w < 6:
        raise ValueError(f"Malvar demosaicing needs at least 6x6, got {w}x{h}")
    idx = channel_index(r.pattern, h, w)
    # colour of the horizontal neighbour tells which row type a green site is in
    horiz = idx[:, np.arange(w) ^ 1]

    def filt(k):
        return ndimage.correlate(plane, k, mode="mirror")

    g_at_rb = filt(_MALVAR_G_AT_RB)
    row_nb = filt(_MALVAR_ROWNB)
    col_nb = filt(_MALVAR_COLNB)
    diag = filt(_MALVAR_DIAG)

    out = np.empty((h, w, 3), dtype=np.float64)
    green = idx == 1
    out[..., 1] = np.where(green, plane, g_at_rb)
    for c, other in ((0, 2), (2, 0)):
        est = np.where(
            idx == c,
            plane,
            np.where(idx == other, diag, np.where(horiz == c, row_nb, col_nb)),
        )
        out[..., c] = est
    return LinearImage(np.clip(out, 0.0, 1.0))


def prefilter(r: RawImage, sigma: float = 0.8) -> RawImage:
    """3x3 Gaussian smoothing of each colour sub-lattice (keeps colours separate)."""
    ax = np.arange(-1, 2, dtype=np.float64)
    g1 = np.exp(-0.5 * (ax / sigma) ** 2)
    k = np.outer(g1, g1)
    k /= k.sum()
    out = np.array(r.data, dtype=np.float64)
    for dy in range(2):
        for dx in range(2):
            out[dy::2, dx::2] = ndimage.correlate(out[dy::2, dx::2], k, mode="nearest")
    return RawImage(out, r.meta)


def demosaic(r: RawImage, method: str = "malvar") -> LinearImage:
    if method == "bilinear":
        return demosaic_bilinear(r)
    if method == "malvar":
        return demosaic_malvar(r)
    raise ValueError(f"unknown demosaic method {method!r}")
