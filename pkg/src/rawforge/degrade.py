"""sRGB detail degradation: blur, resize and JPEG-style quantization.

Stages follow the second-order blur/resize/compress structure used for
real-world super-resolution training, with every random-noise stage removed.
Noise belongs to the sensor and is synthesized later on the mosaic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import fft, ndimage, special

from .imagecore import SrgbImage, _RGBImage
from .rng import param_generator

KERNEL_FAMILIES = ("iso_gaussian", "aniso_gaussian", "sinc")
RESIZE_FILTERS = ("bilinear", "bicubic", "area")
STAGE_KINDS = ("blur", "resize", "compress")


class NoiseStageError(ValueError):
    """A degradation config tried to add random noise."""


# -- kernels -----------------------------------------------------------------

@dataclass(frozen=True)
class KernelSpec:
    family: str = "iso_gaussian"
    size: int = 21
    sigma: float = 1.0
    sigma_x: float = 1.0
    sigma_y: float = 1.0
    theta: float = 0.0
    cutoff: float = math.pi / 2

    def to_dict(self) -> dict:
        d = {"family": self.family, "size": self.size}
        if self.family == "iso_gaussian":
            d["sigma"] = self.sigma
        elif self.family == "aniso_gaussian":
            d.update(sigma_x=self.sigma_x, sigma_y=self.sigma_y, theta=self.theta)
        else:
            d["cutoff"] = self.cutoff
        return d


def make_kernel(spec: KernelSpec) -> np.ndarray:
    size = int(spec.size)
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    r = size // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    if spec.family == "iso_gaussian":
        if spec.sigma <= 0:
            raise ValueError("sigma must be > 0")
        k = np.exp(-(xx**2 + yy**2) / (2.0 * spec.sigma**2))
    elif spec.family == "aniso_gaussian":
        if spec.sigma_x <= 0 or spec.sigma_y <= 0:
            raise ValueError("sigma_x and sigma_y must be > 0")
        c, s = math.cos(spec.theta), math.sin(spec.theta)
        rot = np.array([[c, -s], [s, c]])
        cov = rot @ np.diag([spec.sigma_x**2, spec.sigma_y**2]) @ rot.T
        inv = np.linalg.inv(cov)
        q = inv[0, 0] * xx**2 + 2 * inv[0, 1] * xx * yy + inv[1, 1] * yy**2
        k = np.exp(-0.5 * q)
    elif spec.family == "sinc":
        if not 0 < spec.cutoff <= math.pi:
            raise ValueError("sinc cutoff must lie in (0, pi]")
        rr = np.hypot(xx, yy)
        safe = np.where(rr > 0, rr, 1.0)
        k = spec.cutoff * special.j1(spec.cutoff * safe) / (2.0 * math.pi * safe)
        k[r, r] = spec.cutoff**2 / (4.0 * math.pi)
    else:
        raise ValueError(f"unknown kernel family {spec.family!r}")
    return k / k.sum()


def _planes(img) -> np.ndarray:
    a = img.data if isinstance(img, _RGBImage) else np.asarray(img)
    return a.astype(np.float64)


def _rewrap(img, out: np.ndarray):
    if isinstance(img, _RGBImage):
        return type(img)(np.clip(out, 0.0, 1.0) if isinstance(img, SrgbImage) else out)
    return out


def convolve(img, kernel: np.ndarray):
    """Same-size direct convolution with edge replication."""
    a = _planes(img)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.shape[0] > a.shape[0] or kernel.shape[1] > a.shape[1]:
        raise ValueError(f"kernel {kernel.shape} larger than image {a.shape[:2]}")
    if a.ndim == 2:
        out = ndimage.convolve(a, kernel, mode="nearest")
    else:
        out = np.stack([ndimage.convolve(a[..., c], kernel, mode="nearest") for c in range(a.shape[2])], -1)
    return _rewrap(img, out)


# -- resampling --------------------------------------------------------------

@dataclass(frozen=True)
class ResizeSpec:
    scale: float = 1.0
    filter: str = "bilinear"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("resize scale must be > 0")
        if self.filter not in RESIZE_FILTERS:
            raise ValueError(f"unknown resize filter {self.filter!r}")

    def to_dict(self) -> dict:
        return {"scale": self.scale, "filter": self.filter}


def even_dim(n: float) -> int:
    return max(2, 2 * int(round(n / 2.0)))


def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    return np.where(
        t <= 1,
        (a + 2) * t**3 - (a + 3) * t**2 + 1,
        np.where(t < 2, a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a, 0.0),
    )


def _resample_matrix(n_in: int, n_out: int, method: str) -> np.ndarray:
    """``(n_out, n_in)`` weights with half-pixel centre alignment and clamped borders."""
    scale = n_out / n_in
    w = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    if method == "area":
        lo = rows / scale
        hi = (rows + 1) / scale
        for k in range(n_in):
            overlap = np.clip(np.minimum(hi, k + 1) - np.maximum(lo, k), 0.0, None)
            w[:, k] = overlap * scale
        return w
    src = (rows + 0.5) / scale - 0.5
    if method == "bilinear":
        base = np.floor(src)
        frac = src - base
        taps = [(base, 1.0 - frac), (base + 1, frac)]
    elif method == "bicubic":
        base = np.floor(src)
        taps = [(base + d, _cubic(src - (base + d))) for d in (-1, 0, 1, 2)]
    else:
        raise ValueError(f"unknown resize filter {method!r}")
    for idx, weight in taps:
        np.add.at(w, (rows, np.clip(idx, 0, n_in - 1).astype(int)), weight)
    return w


def resize_to(img, height: int, width: int, method: str = "bilinear"):
    a = _planes(img)
    if height < 1 or width < 1:
        raise ValueError("output dimensions must be positive")
    wy = _resample_matrix(a.shape[0], height, method)
    wx = _resample_matrix(a.shape[1], width, method)
    tmp = np.tensordot(wy, a, axes=(1, 0))
    out = np.moveaxis(np.tensordot(wx, tmp, axes=(1, 1)), 0, 1)
    return _rewrap(img, out)


def resize(img, spec: ResizeSpec):
    """Resize by ``spec.scale``; output dimensions are rounded to even values >= 2."""
    a = _planes(img)
    h, w = even_dim(a.shape[0] * spec.scale), even_dim(a.shape[1] * spec.scale)
    if (h, w) == a.shape[:2] and spec.scale == 1.0:
        return img
    return resize_to(img, h, w, spec.filter)


# -- JPEG quantization ---------------------------------------------------------

_LUMA_Q = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

_CHROMA_Q = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)

_RGB_TO_YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)


def quant_tables(quality: int) -> tuple[np.ndarray, np.ndarray]:
    """Luma and chroma tables scaled by the libjpeg quality law."""
    if not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must be in [1, 100], got {quality}")
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    return tuple(np.clip(np.floor((t * scale + 50) / 100), 1, 255) for t in (_LUMA_Q, _CHROMA_Q))


def _blockwise_quantize(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    blocks = plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)
    coef = fft.dctn(blocks, type=2, norm="ortho", axes=(-2, -1))
    coef = np.round(coef / table) * table
    blocks = fft.idctn(coef, type=2, norm="ortho", axes=(-2, -1))
    return blocks.transpose(0, 2, 1, 3).reshape(h, w)


def jpeg_simulate(img, quality: int):
    """Baseline-JPEG distortion without entropy coding or chroma subsampling."""
    quality = int(quality)
    luma_q, chroma_q = quant_tables(quality)
    a = _planes(img)
    h, w = a.shape[:2]
    ph, pw = -h % 8, -w % 8
    a = np.pad(a, ((0, ph), (0, pw), (0, 0)), mode="edge")
    ycc = np.einsum("...j,ij->...i", a * 255.0, _RGB_TO_YCC)
    ycc[..., 0] -= 128.0
    out = np.empty_like(ycc)
    for c, table in enumerate((luma_q, chroma_q, chroma_q)):
        out[..., c] = _blockwise_quantize(ycc[..., c], table)
    out[..., 0] += 128.0
    rgb = np.einsum("...j,ij->...i", out, _YCC_TO_RGB) / 255.0
    return _rewrap(img, np.clip(rgb[:h, :w], 0.0, 1.0))


# -- configuration -------------------------------------------------------------

def _contains_noise(obj) -> bool:
    if isinstance(obj, dict):
        return any("noise" in str(k).lower() or _contains_noise(v) for k, v in obj.items())
    if isinstance(obj, (list, tuple)):
        return any(_contains_noise(v) for v in obj)
    return isinstance(obj, str) and "noise" in obj.lower()


DEFAULT_STAGES = (
    {"blur": {
        "prob": 1.0,
        "families": {"iso_gaussian": 0.45, "aniso_gaussian": 0.45, "sinc": 0.1},
        "size": [7, 21],
        "sigma": [0.2, 3.0],
        "sigma_x": [0.2, 3.0],
        "sigma_y": [0.2, 3.0],
        "theta": [-math.pi, math.pi],
        "cutoff": [math.pi / 3, math.pi],
    }},
    {"resize": {
        "prob": 1.0,
        "updown": {"up": 0.2, "down": 0.7, "keep": 0.1},
        "scale": [0.25, 1.5],
        "filters": list(RESIZE_FILTERS),
    }},
    {"compress": {"prob": 1.0, "quality": [30, 95]}},
)


@dataclass(frozen=True)
class DegradationConfig:
    """Ordered stage templates; numeric fields are fixed values or ``[lo, hi]`` ranges."""

    stages: tuple = DEFAULT_STAGES
    second_order: bool = True
    seed: int = 0

    def __post_init__(self):
        stages = tuple(self.stages)
        if _contains_noise(stages):
            raise NoiseStageError("degradation configs may not contain noise stages")
        if not stages:
            raise ValueError("at least one degradation stage is required")
        for st in stages:
            if not isinstance(st, dict) or len(st) != 1 or next(iter(st)) not in STAGE_KINDS:
                raise ValueError(f"stage must be a single-key mapping of {STAGE_KINDS}, got {st!r}")
        object.__setattr__(self, "stages", stages)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationConfig":
        if _contains_noise(d):
            raise NoiseStageError("degradation configs may not contain noise stages")
        return cls(
            stages=tuple(d.get("stages", DEFAULT_STAGES)),
            second_order=bool(d.get("second_order", True)),
            seed=int(d.get("seed", 0)),
        )

    def to_dict(self) -> dict:
        return {"stages": list(self.stages), "second_order": self.second_order, "seed": self.seed}

    @classmethod
    def identity(cls) -> "DegradationConfig":
        return cls(
            stages=(
                {"blur": {"family": "iso_gaussian", "size": 7, "sigma": 1e-3}},
                {"resize": {"scale": 1.0, "filter": "bilinear"}},
                {"compress": {"quality": 100}},
            ),
            second_order=False,
        )


@dataclass(frozen=True)
class ResolvedStage:
    kind: str
    spec: Any = field(default=None)

    def to_dict(self) -> dict:
        if self.kind == "compress":
            return {"compress": {"quality": self.spec}}
        return {self.kind: self.spec.to_dict()}


def _draw(rng: np.random.Generator, v):
    if isinstance(v, (list, tuple)):
        lo, hi = float(v[0]), float(v[1])
        return lo if hi <= lo else float(rng.uniform(lo, hi))
    return float(v)


def _choice(rng: np.random.Generator, options, default):
    if options is None:
        return default
    if isinstance(options, str):
        return options
    if isinstance(options, dict):
        names = list(options)
        p = np.asarray([options[k] for k in names], dtype=np.float64)
        return names[int(rng.choice(len(names), p=p / p.sum()))]
    options = list(options)
    return options[int(rng.integers(len(options)))]


def _resolve_blur(rng, t: dict) -> KernelSpec:
    family = _choice(rng, t.get("families", t.get("family")), "iso_gaussian")
    size = t.get("size", 21)
    if isinstance(size, (list, tuple)):
        odd = np.arange(int(size[0]) | 1, int(size[1]) + 1, 2)
        size = int(odd[rng.integers(len(odd))])
    kw = {"family": family, "size": int(size)}
    if family == "iso_gaussian":
        kw["sigma"] = _draw(rng, t.get("sigma", 1.0))
    elif family == "aniso_gaussian":
        kw.update(
            sigma_x=_draw(rng, t.get("sigma_x", 1.0)),
            sigma_y=_draw(rng, t.get("sigma_y", 1.0)),
            theta=_draw(rng, t.get("theta", 0.0)),
        )
    else:
        kw["cutoff"] = _draw(rng, t.get("cutoff", math.pi / 2))
    return KernelSpec(**kw)


def _resolve_resize(rng, t: dict) -> ResizeSpec:
    scale = t.get("scale", 1.0)
    lo, hi = scale if isinstance(scale, (list, tuple)) else (scale, scale)
    lo, hi = (min(max(float(v), 0.25), 1.5) for v in (lo, hi))
    direction = _choice(rng, t.get("updown"), None)
    if direction == "up":
        scale = float(rng.uniform(1.0, hi)) if hi > 1.0 else 1.0
    elif direction == "down":
        scale = float(rng.uniform(lo, 1.0)) if lo < 1.0 else 1.0
    elif direction == "keep":
        scale = 1.0
    else:
        scale = _draw(rng, [lo, hi])
    return ResizeSpec(scale, _choice(rng, t.get("filters", t.get("filter")), "bilinear"))


def resolve_stages(cfg: DegradationConfig, rng: np.random.Generator) -> list[ResolvedStage]:
    """Sample concrete parameters for one pass (two if ``second_order``)."""
    resolved = []
    for _ in range(2 if cfg.second_order else 1):
        for st in cfg.stages:
            kind, t = next(iter(st.items()))
            t = t or {}
            if rng.uniform() >= float(t.get("prob", 1.0)):
                continue
            if kind == "blur":
                resolved.append(ResolvedStage("blur", _resolve_blur(rng, t)))
            elif kind == "resize":
                resolved.append(ResolvedStage("resize", _resolve_resize(rng, t)))
            else:
                q = t.get("quality", 95)
                q = int(round(_draw(rng, q)))
                resolved.append(ResolvedStage("compress", min(max(q, 1), 100)))
    return resolved


def _fit_kernel(k: np.ndarray, shape) -> np.ndarray:
    # heavy downscaling can leave an image smaller than the kernel
    limit = min(shape[:2])
    limit -= 1 - limit % 2
    if k.shape[0] <= limit:
        return k
    m = (k.shape[0] - limit) // 2
    k = k[m:m + limit, m:m + limit]
    return k / k.sum()


def apply_stages(hq, stages, target_size: tuple[int, int] | None = None, final_filter: str = "bicubic"):
    out = hq
    for st in stages:
        if st.kind == "blur":
            out = convolve(out, _fit_kernel(make_kernel(st.spec), _planes(out).shape))
        elif st.kind == "resize":
            out = resize(out, st.spec)
        else:
            out = jpeg_simulate(out, st.spec)
    h, w = _planes(hq).shape[:2] if target_size is None else target_size
    h, w = even_dim(h), even_dim(w)
    if _planes(out).shape[:2] != (h, w):
        out = resize_to(out, h, w, final_filter)
    return out


def degrade_detail(hq: SrgbImage, cfg: DegradationConfig, rng: np.random.Generator | None = None,
                   target_size: tuple[int, int] | None = None) -> SrgbImage:
    """Blur / resize / compress ``hq``; the result is resized back to ``target_size``.

    ``target_size`` defaults to the input size rounded to even dimensions.
    """
    rng = param_generator(cfg.seed) if rng is None else rng
    return apply_stages(hq, resolve_stages(cfg, rng), target_size)
