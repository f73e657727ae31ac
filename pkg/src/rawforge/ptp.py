"""Post tone processing: white balance, colour correction, gamma, tone curve.

The forward chain maps scene-linear RGB to display sRGB; the inverse chain
undoes it stage by stage in reverse order.  Stage functions accept either a
typed image or a raw ``(..., 3)`` array; arrays keep their dtype so the
derivative checks can run in float64.

Forward-mode derivatives are carried as value/tangent pairs through every
stage (:class:`PixelJet`).  Clamps pass a zero tangent when active.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .imagecore import IDENTITY_CCM, CaptureMetadata, LinearImage, SrgbImage, _RGBImage

SRGB_LINEAR_CUTOFF = 0.0031308
SRGB_ENCODED_CUTOFF = 12.92 * SRGB_LINEAR_CUTOFF
TONE_CURVES = ("smoothstep", "identity")


@dataclass(frozen=True)
class Gamma:
    """Transfer-curve selector: the piecewise sRGB curve or a pure power law."""

    kind: str = "srgb"
    exponent: float = 2.4

    def __post_init__(self):
        if self.kind not in ("srgb", "power"):
            raise ValueError(f"unknown gamma curve {self.kind!r}")
        if self.kind == "power" and not self.exponent > 0:
            raise ValueError("power gamma exponent must be > 0")

    @classmethod
    def parse(cls, spec) -> "Gamma":
        if isinstance(spec, Gamma):
            return spec
        s = str(spec).strip().lower()
        if s in ("srgb", "srgb_standard"):
            return cls("srgb")
        if s.startswith("power"):
            _, _, exp = s.partition(":")
            return cls("power", float(exp or 2.2))
        raise ValueError(f"cannot parse gamma spec {spec!r}")

    def __str__(self):
        return "srgb" if self.kind == "srgb" else f"power:{self.exponent:g}"


@dataclass(frozen=True)
class PtpParams:
    wb_gains: tuple = (1.0, 1.0, 1.0)
    ccm: tuple = IDENTITY_CCM
    gamma: Gamma = Gamma("power", 2.2)
    tone: str = "smoothstep"

    def __post_init__(self):
        gains = tuple(float(g) for g in self.wb_gains)
        if len(gains) != 3 or not all(g > 0 for g in gains):
            raise ValueError(f"white-balance gains must be positive, got {self.wb_gains}")
        ccm = np.asarray(self.ccm, dtype=np.float64).reshape(3, 3)
        if abs(np.linalg.det(ccm)) <= 1e-8:
            raise ValueError("ccm is singular")
        if np.max(np.abs(ccm.sum(axis=1) - 1.0)) > 1e-6:
            raise ValueError("ccm rows must sum to 1")
        if self.tone not in TONE_CURVES:
            raise ValueError(f"unknown tone curve {self.tone!r}")
        object.__setattr__(self, "wb_gains", gains)
        object.__setattr__(self, "ccm", tuple(tuple(float(v) for v in r) for r in ccm))
        object.__setattr__(self, "gamma", Gamma.parse(self.gamma))

    @classmethod
    def identity(cls) -> "PtpParams":
        return cls((1.0, 1.0, 1.0), IDENTITY_CCM, Gamma("power", 1.0), "identity")

    @classmethod
    def from_meta(cls, meta: CaptureMetadata) -> "PtpParams":
        return cls(meta.wb_gains, meta.ccm, Gamma.parse(meta.gamma), meta.tone)

    def meta_fields(self) -> dict:
        return {"wb_gains": self.wb_gains, "ccm": self.ccm, "gamma": str(self.gamma), "tone": self.tone}

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.ccm, dtype=np.float64)


def _pixels(x) -> np.ndarray:
    if isinstance(x, _RGBImage):
        return x.data
    a = np.asarray(x)
    if not np.issubdtype(a.dtype, np.floating):
        a = a.astype(np.float64)
    return a


def _wrap(like, out: np.ndarray, cls=None):
    if isinstance(like, _RGBImage):
        return (cls or type(like))(out)
    return out


def _gains(gains, dtype) -> np.ndarray:
    g = np.asarray(gains, dtype=np.float64)
    if g.shape != (3,) or np.any(g <= 0):
        raise ValueError(f"white-balance gains must be three positive values, got {gains}")
    return g.astype(dtype)


def _matrix(ccm) -> np.ndarray:
    m = np.asarray(ccm, dtype=np.float64).reshape(3, 3)
    if abs(np.linalg.det(m)) <= 1e-8:
        raise ValueError("ccm is singular (|det| <= 1e-8)")
    return m


def _mat_apply(a: np.ndarray, m: np.ndarray) -> np.ndarray:
    return np.einsum("...j,ij->...i", a, m.astype(a.dtype))


# -- white balance -------------------------------------------------------------

def apply_wb(x, gains):
    a = _pixels(x)
    return _wrap(x, np.clip(a * _gains(gains, a.dtype), 0.0, 1.0))


def _soft_roll(y: np.ndarray, g: float) -> np.ndarray:
    # Identity on [0, 1]; above 1 a monotone cubic knee saturates at g so that
    # y / g never exceeds 1.
    over = g - 1.0
    span = 1.5 * over
    s = np.clip((y - 1.0) / span, 0.0, 1.0)
    rolled = 1.0 + over * (1.5 * s - 0.5 * s**3)
    return np.where(y > 1.0, rolled, y)


def invert_wb(x, gains):
    a = _pixels(x)
    g = _gains(gains, np.float64)
    out = np.empty_like(a)
    for c in range(3):
        ch = a[..., c]
        if g[c] > 1.0:
            ch = _soft_roll(ch, g[c])
        out[..., c] = ch / g[c]
    return _wrap(x, out)


# -- colour correction ---------------------------------------------------------

def apply_ccm(x, ccm):
    a = _pixels(x)
    return _wrap(x, np.clip(_mat_apply(a, _matrix(ccm)), 0.0, 1.0))


def invert_ccm(x, ccm):
    a = _pixels(x)
    return _wrap(x, _mat_apply(a, np.linalg.inv(_matrix(ccm))))


# -- transfer curves ---------------------------------------------------------

def gamma_compress(x, gamma=Gamma("srgb")):
    gamma = Gamma.parse(gamma)
    a = np.clip(_pixels(x), 0.0, 1.0)
    if gamma.kind == "power":
        out = a ** (1.0 / gamma.exponent)
    else:
        out = np.where(a <= SRGB_LINEAR_CUTOFF, 12.92 * a, 1.055 * a ** (1.0 / 2.4) - 0.055)
    return _wrap(x, out.astype(a.dtype, copy=False))


def gamma_expand(y, gamma=Gamma("srgb")):
    gamma = Gamma.parse(gamma)
    a = np.clip(_pixels(y), 0.0, 1.0)
    if gamma.kind == "power":
        out = a ** gamma.exponent
    else:
        out = np.where(a <= SRGB_ENCODED_CUTOFF, a / 12.92, ((a + 0.055) / 1.055) ** 2.4)
    return _wrap(y, out.astype(a.dtype, copy=False))


def tone_map(x, curve: str = "smoothstep"):
    a = np.clip(_pixels(x), 0.0, 1.0)
    if curve == "identity":
        return _wrap(x, a)
    if curve != "smoothstep":
        raise ValueError(f"unknown tone curve {curve!r}")
    return _wrap(x, 3.0 * a**2 - 2.0 * a**3)


def tone_unmap(y, curve: str = "smoothstep"):
    a = np.clip(_pixels(y), 0.0, 1.0)
    if curve == "identity":
        return _wrap(y, a)
    if curve != "smoothstep":
        raise ValueError(f"unknown tone curve {curve!r}")
    out = 0.5 - np.sin(np.arcsin(1.0 - 2.0 * a) / 3.0)
    return _wrap(y, np.clip(out, 0.0, 1.0))


# -- full chains -------------------------------------------------------------

def ptp_forward(x, p: PtpParams):
    """Linear RGB -> sRGB: white balance, CCM, gamma compression, tone curve."""
    a = _pixels(x)
    a = apply_wb(a, p.wb_gains)
    a = apply_ccm(a, p.matrix)
    a = gamma_compress(a, p.gamma)
    a = tone_map(a, p.tone)
    return _wrap(x, a, SrgbImage)


def ptp_inverse(y, p: PtpParams):
    """sRGB -> linear RGB, undoing each forward stage in reverse order."""
    a = _pixels(y)
    a = tone_unmap(a, p.tone)
    a = gamma_expand(a, p.gamma)
    a = invert_ccm(a, p.matrix)
    a = invert_wb(a, p.wb_gains)
    return _wrap(y, np.clip(a, 0.0, 1.0), LinearImage)


# -- forward-mode derivatives ----------------------------------------------------

@dataclass(frozen=True)
class PixelJet:
    """Per-pixel value with a directional derivative carried alongside."""

    value: np.ndarray
    tangent: np.ndarray
    saturated: np.ndarray

    def clamp(self, pre: np.ndarray) -> "PixelJet":
        active = (pre < 0.0) | (pre > 1.0)
        boundary = (pre <= 0.0) | (pre >= 1.0)
        return PixelJet(
            np.clip(pre, 0.0, 1.0),
            np.where(active, 0.0, self.tangent),
            self.saturated | boundary.any(axis=-1),
        )


def _jet_wb(j: PixelJet, gains) -> PixelJet:
    g = _gains(gains, j.value.dtype)
    return PixelJet(j.value, j.tangent * g, j.saturated).clamp(j.value * g)


def _jet_ccm(j: PixelJet, ccm) -> PixelJet:
    m = _matrix(ccm)
    return PixelJet(j.value, _mat_apply(j.tangent, m), j.saturated).clamp(_mat_apply(j.value, m))


def _gamma_slope(x: np.ndarray, gamma: Gamma) -> np.ndarray:
    safe = np.where(x > 0.0, x, 1.0)
    if gamma.kind == "power":
        d = (1.0 / gamma.exponent) * safe ** (1.0 / gamma.exponent - 1.0)
    else:
        d = np.where(x <= SRGB_LINEAR_CUTOFF, 12.92, (1.055 / 2.4) * safe ** (1.0 / 2.4 - 1.0))
    if gamma.kind == "srgb":
        return d
    return np.where(x > 0.0, d, 0.0)


def _jet_gamma(j: PixelJet, gamma: Gamma) -> PixelJet:
    return PixelJet(
        gamma_compress(j.value, gamma),
        j.tangent * _gamma_slope(j.value, gamma),
        j.saturated,
    )


def _jet_tone(j: PixelJet, curve: str) -> PixelJet:
    if curve == "identity":
        return j
    x = j.value
    return PixelJet(tone_map(x, curve), j.tangent * (6.0 * x * (1.0 - x)), j.saturated)


class JvpResult(NamedTuple):
    value: object
    tangent: np.ndarray
    saturated: np.ndarray


def ptp_jvp(x, tangent, p: PtpParams) -> JvpResult:
    """Forward value and exact directional derivative of :func:`ptp_forward`.

    ``saturated`` flags pixels where some clamp sits on or beyond its bound;
    their tangent components through the active clamp are zero.
    """
    a = _pixels(x)
    t = np.broadcast_to(_pixels(tangent), a.shape).astype(a.dtype)
    j = PixelJet(a, t, np.zeros(a.shape[:-1], dtype=bool))
    j = _jet_wb(j, p.wb_gains)
    j = _jet_ccm(j, p.matrix)
    j = _jet_gamma(j, p.gamma)
    j = _jet_tone(j, p.tone)
    return JvpResult(_wrap(x, j.value, SrgbImage), j.tangent, j.saturated)


def ptp_jacobian(x, p: PtpParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel 3x3 Jacobian ``J[..., i, j] = d out_i / d in_j`` and the saturation mask."""
    a = _pixels(x)
    cols = []
    saturated = None
    for k in range(3):
        basis = np.zeros(a.shape, dtype=a.dtype)
        basis[..., k] = 1.0
        res = ptp_jvp(a, basis, p)
        cols.append(res.tangent)
        saturated = res.saturated
    return np.stack(cols, axis=-1), saturated
