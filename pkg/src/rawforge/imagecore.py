"""Image value types, sidecar metadata and lossless file IO.

Images are immutable wrappers around read-only numpy arrays.  RGB images are
stored as ``(H, W, 3)`` float32, RAW frames as ``(H, W)`` float32 with the
capture metadata attached.
"""

from __future__ import annotations

import enum
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import ClassVar, Union

import cv2
import numpy as np

RFIM_MAGIC = b"RFIM"
RFIM_VERSION = 1
_RFIM_HEADER = struct.Struct("<4sIIII")


class ImageFormatError(ValueError):
    """Unreadable file or a shape/channel layout that does not match the type."""


class MetadataError(ValueError):
    """Missing or malformed capture metadata."""


class BayerPattern(str, enum.Enum):
    RGGB = "RGGB"
    BGGR = "BGGR"
    GRBG = "GRBG"
    GBRG = "GBRG"

    @classmethod
    def parse(cls, value: Union[str, "BayerPattern"]) -> "BayerPattern":
        if isinstance(value, BayerPattern):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown Bayer pattern {value!r}") from None

    @property
    def quad(self) -> np.ndarray:
        """2x2 array of channel indices (0=R, 1=G, 2=B), row-major."""
        lut = {"R": 0, "G": 1, "B": 2}
        return np.array([lut[c] for c in self.value], dtype=np.intp).reshape(2, 2)


@dataclass(frozen=True)
class NoiseParams:
    shot: float = 0.0
    read: float = 0.0

    def __post_init__(self):
        for name in ("shot", "read"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"noise parameter {name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)


IDENTITY_CCM = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


@dataclass(frozen=True)
class CaptureMetadata:
    """Pipeline state that travels with a RAW frame (and its sidecar)."""

    pattern: BayerPattern = BayerPattern.RGGB
    wb_gains: tuple = (1.0, 1.0, 1.0)
    ccm: tuple = IDENTITY_CCM
    noise: NoiseParams = field(default_factory=NoiseParams)
    seed: int = 0
    gamma: str = "power:2.2"
    tone: str = "smoothstep"
    preclip: bool = False

    def __post_init__(self):
        object.__setattr__(self, "pattern", BayerPattern.parse(self.pattern))
        gains = tuple(float(g) for g in self.wb_gains)
        if len(gains) != 3 or not all(np.isfinite(g) and g > 0 for g in gains):
            raise MetadataError(f"wb_gains must be three positive reals, got {self.wb_gains}")
        ccm = np.asarray(self.ccm, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(ccm)) or abs(np.linalg.det(ccm)) <= 1e-8:
            raise MetadataError("ccm must be a finite invertible 3x3 matrix")
        seed = int(self.seed)
        if not 0 <= seed < 2**64:
            raise MetadataError(f"seed must be an unsigned 64-bit integer, got {seed}")
        object.__setattr__(self, "wb_gains", gains)
        object.__setattr__(self, "ccm", tuple(tuple(float(v) for v in row) for row in ccm))
        object.__setattr__(self, "seed", seed)

    def to_dict(self) -> dict:
        return {
            "pattern": self.pattern.value,
            "wb_gains": list(self.wb_gains),
            "ccm": [v for row in self.ccm for v in row],
            "shot": self.noise.shot,
            "read": self.noise.read,
            "seed": self.seed,
            "gamma": self.gamma,
            "tone": self.tone,
            "preclip": self.preclip,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaptureMetadata":
        try:
            ccm = d.get("ccm", [v for row in IDENTITY_CCM for v in row])
            if len(ccm) != 9:
                raise MetadataError("ccm must hold 9 row-major values")
            return cls(
                pattern=d["pattern"],
                wb_gains=tuple(d.get("wb_gains", (1.0, 1.0, 1.0))),
                ccm=tuple(tuple(ccm[3 * i:3 * i + 3]) for i in range(3)),
                noise=NoiseParams(d.get("shot", 0.0), d.get("read", 0.0)),
                seed=d.get("seed", 0),
                gamma=d.get("gamma", "power:2.2"),
                tone=d.get("tone", "smoothstep"),
                preclip=bool(d.get("preclip", False)),
            )
        except KeyError as exc:
            raise MetadataError(f"metadata is missing key {exc}") from None


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float32, copy=True, order="C")
    a.setflags(write=False)
    return a


def _check_finite(a: np.ndarray):
    if not np.all(np.isfinite(a)):
        raise ValueError("image samples must be finite")


@dataclass(frozen=True, eq=False)
class _RGBImage:
    data: np.ndarray
    domain: ClassVar[str] = ""

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ImageFormatError(f"{type(self).__name__} needs shape (H, W, 3), got {a.shape}")
        _check_finite(a)
        object.__setattr__(self, "data", _freeze(a))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def r(self) -> np.ndarray:
        return self.data[..., 0]

    @property
    def g(self) -> np.ndarray:
        return self.data[..., 1]

    @property
    def b(self) -> np.ndarray:
        return self.data[..., 2]


class LinearImage(_RGBImage):
    """Scene-linear RGB.  Not range-checked: inverse stages may overshoot before clamping."""

    domain = "linear"


class SrgbImage(_RGBImage):
    """Display-referred RGB in [0, 1]."""

    domain = "srgb"

    def __post_init__(self):
        super().__post_init__()
        if self.data.min() < 0 or self.data.max() > 1:
            raise ValueError("sRGB samples must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class RawImage:
    """Mosaiced sensor frame.  ``meta`` may be None for a bare plane; stages that
    need the pattern or colour parameters then raise :class:`MetadataError`."""

    data: np.ndarray
    meta: CaptureMetadata | None = None

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 2:
            raise ImageFormatError(f"RawImage needs a single plane, got shape {a.shape}")
        h, w = a.shape
        if h < 2 or w < 2 or h % 2 or w % 2:
            raise ImageFormatError(f"RAW dimensions must be even and >= 2, got {w}x{h}")
        _check_finite(a)
        preclip = self.meta is not None and self.meta.preclip
        if not preclip and (a.min() < 0 or a.max() > 1):
            raise ValueError("RAW samples must lie in [0, 1] unless metadata marks them pre-clip")
        object.__setattr__(self, "data", _freeze(a))

    @property
    def pattern(self) -> BayerPattern:
        return self.require_meta().pattern

    def require_meta(self) -> CaptureMetadata:
        if self.meta is None:
            raise MetadataError("RAW frame carries no capture metadata")
        return self.meta

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def with_meta(self, **changes) -> "RawImage":
        return RawImage(self.data, replace(self.require_meta(), **changes))


Image = Union[LinearImage, SrgbImage, RawImage]
_DOMAINS = {"linear": LinearImage, "srgb": SrgbImage}


# -- sidecar -----------------------------------------------------------------

def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".meta.json")


def read_sidecar(path) -> dict | None:
    sp = sidecar_path(path)
    if not sp.exists():
        return None
    try:
        return json.loads(sp.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MetadataError(f"cannot parse sidecar {sp}: {exc}") from None


def load_meta(path) -> CaptureMetadata:
    d = read_sidecar(path)
    if d is None:
        raise MetadataError(f"no metadata sidecar for {path}")
    return CaptureMetadata.from_dict(d)


def atomic_write_bytes(path, payload: bytes):
    """Write via a temp file in the target directory and rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_sidecar(path, d: dict):
    atomic_write_bytes(sidecar_path(path), (json.dumps(d, indent=2, sort_keys=True) + "\n").encode())


# -- raw-float container -----------------------------------------------------

def encode_rfim(planes: np.ndarray) -> bytes:
    """Serialize a (C, H, W) array as an RFIM container."""
    planes = np.asarray(planes, dtype="<f4")
    c, h, w = planes.shape
    return _RFIM_HEADER.pack(RFIM_MAGIC, RFIM_VERSION, c, w, h) + planes.tobytes(order="C")


def decode_rfim(payload: bytes) -> np.ndarray:
    if len(payload) < _RFIM_HEADER.size:
        raise ImageFormatError("truncated RFIM header")
    magic, version, c, w, h = _RFIM_HEADER.unpack_from(payload)
    if magic != RFIM_MAGIC or version != RFIM_VERSION:
        raise ImageFormatError(f"not an RFIM v1 file (magic={magic!r}, version={version})")
    n = c * w * h
    body = payload[_RFIM_HEADER.size:]
    if len(body) != 4 * n or n == 0:
        raise ImageFormatError(f"RFIM body holds {len(body)} bytes, header declares {c}x{w}x{h} floats")
    return np.frombuffer(body, dtype="<f4").reshape(c, h, w).astype(np.float32)


# -- load / save -------------------------------------------------------------

def _read_png(path: Path) -> tuple[np.ndarray, int]:
    raw = np.fromfile(str(path), dtype=np.uint8)
    arr = cv2.imdecode(raw, cv2.IMREAD_UNCHANGED) if raw.size else None
    if arr is None:
        raise ImageFormatError(f"cannot decode image {path}")
    if arr.dtype == np.uint8:
        depth = 8
    elif arr.dtype == np.uint16:
        depth = 16
    else:
        raise ImageFormatError(f"unsupported sample type {arr.dtype} in {path}")
    if arr.ndim == 3:
        if arr.shape[2] == 4:
            arr = arr[..., :3]
        elif arr.shape[2] != 3:
            raise ImageFormatError(f"unsupported channel count {arr.shape[2]} in {path}")
        arr = arr[..., ::-1]
    return arr, depth


def load_image(path, domain: str | None = None) -> Image:
    """Load a PNG (8/16-bit) or RFIM file.

    Single-channel files load as :class:`RawImage` and require a sidecar.
    Three-channel files take their domain from ``domain``, then the sidecar's
    ``domain`` key, then default to sRGB.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    side = read_sidecar(path)
    if path.suffix.lower() == ".rfim":
        planes = decode_rfim(path.read_bytes())
        arr = planes[0] if planes.shape[0] == 1 else np.moveaxis(planes, 0, -1)
        if arr.ndim == 3 and arr.shape[2] != 3:
            raise ImageFormatError(f"RFIM image with {arr.shape[2]} channels is not an image")
    else:
        codes, depth = _read_png(path)
        arr = codes.astype(np.float64) / (2**depth - 1)

    domain = domain or (side or {}).get("domain")
    if arr.ndim == 2:
        if domain not in (None, "raw"):
            raise ImageFormatError(f"{path} is single-channel but declared {domain!r}")
        if side is None:
            raise MetadataError(f"RAW file {path} has no metadata sidecar")
        return RawImage(arr, CaptureMetadata.from_dict(side))
    if domain == "raw":
        raise ImageFormatError(f"{path} has 3 channels but was declared RAW")
    cls = _DOMAINS.get(domain or "srgb")
    if cls is None:
        raise ImageFormatError(f"unknown domain {domain!r}")
    return cls(arr)


def quantize(x: np.ndarray, bitdepth: int) -> np.ndarray:
    """Round-half-up to integer codes."""
    maxv = 2**bitdepth - 1
    codes = np.floor(np.asarray(x, dtype=np.float64) * maxv + 0.5)
    return codes.astype(np.uint8 if bitdepth == 8 else np.uint16)


def save_image(img: Image, path, bitdepth: int = 16, extra_meta: dict | None = None):
    """Save ``img`` as PNG (8/16-bit) or RFIM, depending on the extension.

    RAW frames always get a sidecar; RGB images get one carrying the domain tag
    (plus ``extra_meta``) unless they are plain sRGB with nothing extra.
    """
    path = Path(path)
    if bitdepth not in (8, 16):
        raise ValueError("bitdepth must be 8 or 16")
    a = img.data
    if path.suffix.lower() == ".rfim":
        planes = a[None] if a.ndim == 2 else np.moveaxis(a, -1, 0)
        atomic_write_bytes(path, encode_rfim(planes))
    else:
        if a.min() < 0 or a.max() > 1:
            raise ValueError("samples outside [0, 1]; clamp before saving to PNG")
        codes = quantize(a, bitdepth)
        if codes.ndim == 3:
            codes = np.ascontiguousarray(codes[..., ::-1])
        ok, buf = cv2.imencode(".png", codes)
        if not ok:
            raise OSError(f"PNG encoding failed for {path}")
        atomic_write_bytes(path, buf.tobytes())

    if isinstance(img, RawImage):
        side = img.require_meta().to_dict()
        side["domain"] = "raw"
    else:
        side = {"domain": img.domain} if (img.domain != "srgb" or extra_meta) else None
    if side is not None:
        side.update(extra_meta or {})
        write_sidecar(path, side)


def crop(img: Image, x0: int, y0: int, w: int, h: int) -> Image:
    height, width = img.data.shape[:2]
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > width or y0 + h > height:
        raise ValueError(f"crop ({x0},{y0},{w},{h}) outside {width}x{height}")
    region = img.data[y0:y0 + h, x0:x0 + w]
    if isinstance(img, RawImage):
        if x0 % 2 or y0 % 2:
            raise ValueError("RAW crop offsets must be even to keep the Bayer phase")
        return RawImage(region, img.meta)
    return type(img)(region)
