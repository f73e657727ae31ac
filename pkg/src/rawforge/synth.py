"""Training-pair synthesis and the feed-forward preview ISP.

LQ path:  sRGB HQ -> detail degradation -> inverse PTP -> mosaic + noise.
GT path:  sRGB HQ -> inverse PTP (same sampled PTP parameters).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import __version__
from .cfa import demosaic, mosaic, prefilter
from .degrade import DegradationConfig, apply_stages, even_dim, resolve_stages
from .imagecore import (
    BayerPattern,
    CaptureMetadata,
    ImageFormatError,
    LinearImage,
    NoiseParams,
    RawImage,
    SrgbImage,
    atomic_write_bytes,
    crop,
    load_image,
    save_image,
)
from .noise import NoiseRanges, add_shot_read_noise, sample_noise_params
from .ptp import Gamma, PtpParams, ptp_forward, ptp_inverse
from .rng import derive_seed, param_generator

log = logging.getLogger(__name__)

PATTERN_CYCLE = (BayerPattern.RGGB, BayerPattern.BGGR, BayerPattern.GRBG, BayerPattern.GBRG)

# camera-to-display matrix blended with the identity when sampling CCMs; rows sum to 1
CAMERA_CCM = np.array([
    [1.62, -0.46, -0.16],
    [-0.22, 1.44, -0.22],
    [0.02, -0.54, 1.52],
])
WB_GAIN_RANGE = (1 / 1.4, 1.4)


def sample_ptp_params(rng: np.random.Generator, gamma="power:2.2", tone: str = "smoothstep") -> PtpParams:
    lo, hi = (math.log(v) for v in WB_GAIN_RANGE)
    g_r, g_b = (math.exp(rng.uniform(lo, hi)) for _ in range(2))
    blend = rng.uniform(0.0, 1.0)
    ccm = (1.0 - blend) * np.eye(3) + blend * CAMERA_CCM
    ccm /= ccm.sum(axis=1, keepdims=True)
    return PtpParams((g_r, 1.0, g_b), tuple(map(tuple, ccm)), Gamma.parse(gamma), tone)


def capture_meta(p: PtpParams, pattern, noise: NoiseParams = NoiseParams(), seed: int = 0) -> CaptureMetadata:
    return CaptureMetadata(
        pattern=BayerPattern.parse(pattern),
        wb_gains=p.wb_gains,
        ccm=p.ccm,
        noise=noise,
        seed=seed,
        gamma=str(p.gamma),
        tone=p.tone,
    )


def mns(x: LinearImage, pattern, p: NoiseParams, seed: int, meta: CaptureMetadata | None = None,
        *, chunks: int = 1) -> RawImage:
    """Mosaic then add shot/read noise."""
    return add_shot_read_noise(mosaic(x, pattern, meta), p, seed, chunks=chunks)


@dataclass(frozen=True)
class SynthConfig:
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    noise: NoiseRanges = field(default_factory=NoiseRanges)
    gamma: str = "power:2.2"
    tone: str = "smoothstep"
    scale: float = 1.0
    zero_noise: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(
            degradation=DegradationConfig.from_dict(d.get("degradation", {})),
            noise=NoiseRanges.from_dict(d.get("noise", {})),
            gamma=str(Gamma.parse(d.get("gamma", "power:2.2"))),
            tone=d.get("tone", "smoothstep"),
            scale=float(d.get("scale", 1.0)),
            zero_noise=bool(d.get("zero_noise", False)),
        )

    def to_dict(self) -> dict:
        return {
            "degradation": self.degradation.to_dict(),
            "noise": self.noise.to_dict(),
            "gamma": self.gamma,
            "tone": self.tone,
            "scale": self.scale,
            "zero_noise": self.zero_noise,
        }


@dataclass
class SynthesisRecord:
    index: int
    source: str
    seed: int
    meta: dict
    degradation: list
    raw_lq_path: str = ""
    linear_hq_path: str = ""
    srgb_hq_path: str = ""
    ddnet_raw_path: str = ""
    content_hash: str = ""
    pipeline_version: str = __version__


class SynthesisPair(NamedTuple):
    raw_lq: RawImage
    linear_hq: LinearImage
    record: SynthesisRecord


def _noise_for(rng, cfg: SynthConfig) -> NoiseParams:
    return NoiseParams() if cfg.zero_noise else sample_noise_params(rng, cfg.noise)


def synthesize_pair(hq: SrgbImage, cfg: SynthConfig, pattern, seed: int, *, chunks: int = 1) -> SynthesisPair:
    """Degraded RAW input and clean linear target from one sRGB image.

    Both paths are inverted with the same sampled PTP parameters, so the
    difference between them comes only from degradation, mosaicking and noise.
    """
    if hq.height % 2 or hq.width % 2:
        raise ImageFormatError(f"source must have even dimensions, got {hq.width}x{hq.height}")
    rng = param_generator(seed)
    p = sample_ptp_params(rng, cfg.gamma, cfg.tone)
    noise = _noise_for(rng, cfg)
    stages = resolve_stages(cfg.degradation, rng)
    target = (even_dim(hq.height * cfg.scale), even_dim(hq.width * cfg.scale))

    lq_srgb = apply_stages(hq, stages, target)
    noise_seed = derive_seed(seed, "noise")
    meta = capture_meta(p, pattern, noise, noise_seed)
    raw = mns(ptp_inverse(lq_srgb, p), pattern, noise, noise_seed, meta, chunks=chunks)
    linear = ptp_inverse(hq, p)
    record = SynthesisRecord(
        index=-1,
        source="",
        seed=seed,
        meta=raw.meta.to_dict(),
        degradation=[st.to_dict() for st in stages],
    )
    return SynthesisPair(raw, linear, record)


def synthesize_ddnet_pair(hq: SrgbImage, cfg: SynthConfig, pattern, seed: int) -> tuple[RawImage, LinearImage]:
    """Detail-preserving pair for the demosaic/denoise network: no degradation stage."""
    rng = param_generator(derive_seed(seed, "ddnet"))
    p = sample_ptp_params(rng, cfg.gamma, cfg.tone)
    noise = _noise_for(rng, cfg)
    noise_seed = derive_seed(seed, "ddnet-noise")
    linear = ptp_inverse(hq, p)
    raw = mns(linear, pattern, noise, noise_seed, capture_meta(p, pattern, noise, noise_seed))
    return raw, linear


def feed_forward_isp(raw: RawImage, *, denoise: bool = False, method: str = "malvar") -> SrgbImage:
    """Preview ISP: optional sub-lattice pre-filter, demosaic, then PTP from the frame's metadata."""
    meta = raw.require_meta()
    if denoise:
        raw = prefilter(raw)
    return ptp_forward(demosaic(raw, method), PtpParams.from_meta(meta))


# -- corpus orchestration ------------------------------------------------------

@dataclass
class Manifest:
    master_seed: int
    source_dataset: str
    config: dict
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    pipeline_version: str = __version__

    @property
    def failure_count(self) -> int:
        return len(self.failures)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["failure_count"] = self.failure_count
        return d


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def _content_hash(seed: int, cfg: SynthConfig, pattern, ddnet: bool, source: bytes) -> str:
    h = hashlib.sha256()
    h.update(json.dumps([seed, cfg.to_dict(), str(BayerPattern.parse(pattern).value), ddnet, __version__],
                        sort_keys=True).encode())
    h.update(source)
    return h.hexdigest()


def _even_crop(img: SrgbImage) -> SrgbImage:
    h, w = img.height - img.height % 2, img.width - img.width % 2
    if h < 2 or w < 2:
        raise ImageFormatError(f"source too small: {img.width}x{img.height}")
    return img if (h, w) == (img.height, img.width) else crop(img, 0, 0, w, h)


def _process_one(i: int, src: Path, out_dir: Path, cfg: SynthConfig, seed: int, pattern, ddnet: bool):
    payload = src.read_bytes()
    digest = _content_hash(seed, cfg, pattern, ddnet, payload)
    marker = out_dir / "records" / f"{i:05d}.json"
    if marker.exists():
        try:
            done = json.loads(marker.read_text())
            paths = [done[k] for k in ("raw_lq_path", "linear_hq_path", "srgb_hq_path", "ddnet_raw_path") if done[k]]
            if done.get("content_hash") == digest and all((out_dir / p).exists() for p in paths):
                log.debug("record %d up to date, skipping", i)
                return SynthesisRecord(**done)
        except (json.JSONDecodeError, KeyError, TypeError):
            pass

    hq = load_image(src, domain="srgb")
    if not isinstance(hq, SrgbImage):
        raise ImageFormatError(f"{src} is not an RGB image")
    hq = _even_crop(hq)
    pair = synthesize_pair(hq, cfg, pattern, seed)
    stem = f"{i:05d}_{src.stem}"
    rec = pair.record
    rec.index, rec.source, rec.content_hash = i, src.name, digest
    rec.raw_lq_path = f"raw/{stem}.rfim"
    rec.linear_hq_path = f"linear/{stem}.rfim"
    rec.srgb_hq_path = f"srgb/{stem}.png"
    save_image(pair.raw_lq, out_dir / rec.raw_lq_path)
    save_image(pair.linear_hq, out_dir / rec.linear_hq_path, extra_meta=rec.meta | {"domain": "linear"})
    save_image(hq, out_dir / rec.srgb_hq_path, bitdepth=16)
    if ddnet:
        raw_d, lin_d = synthesize_ddnet_pair(hq, cfg, pattern, seed)
        rec.ddnet_raw_path = f"ddnet/{stem}.rfim"
        save_image(raw_d, out_dir / rec.ddnet_raw_path)
        save_image(lin_d, out_dir / f"ddnet/{stem}_linear.rfim", extra_meta=raw_d.meta.to_dict() | {"domain": "linear"})
    atomic_write_bytes(marker, _json_bytes(asdict(rec)))
    return rec


SOURCE_SUFFIXES = (".png",)


def run_manifest(src_dir, out_dir, cfg: SynthConfig, master_seed: int, *, pattern=None,
                 ddnet_pairs: bool = False, threads: int = 1) -> Manifest:
    """Synthesize one record per source image and write ``manifest.json``.

    ``pattern=None`` cycles RGGB, BGGR, GRBG, GBRG by source index.  Output
    bytes depend only on the master seed, config and sources; the thread
    count changes nothing but wall time.
    """
    src_dir, out_dir = Path(src_dir), Path(out_dir)
    sources = sorted(p for p in src_dir.iterdir() if p.suffix.lower() in SOURCE_SUFFIXES)
    for sub in ("raw", "linear", "srgb", "records") + (("ddnet",) if ddnet_pairs else ()):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    seeds = [derive_seed(master_seed, i) for i in range(len(sources))]
    if len(set(seeds)) != len(seeds):
        raise RuntimeError("per-record seed collision; choose another master seed")
    patterns = [BayerPattern.parse(pattern) if pattern else PATTERN_CYCLE[i % 4] for i in range(len(sources))]

    def job(i):
        try:
            return _process_one(i, sources[i], out_dir, cfg, seeds[i], patterns[i], ddnet_pairs)
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", sources[i].name, exc)
            return {"index": i, "source": sources[i].name, "error": str(exc)}

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        results = list(pool.map(job, range(len(sources))))

    manifest = Manifest(master_seed=int(master_seed), source_dataset=src_dir.name, config=cfg.to_dict())
    for res in results:
        if isinstance(res, SynthesisRecord):
            manifest.records.append(asdict(res))
        else:
            manifest.failures.append(res)
    atomic_write_bytes(out_dir / "manifest.json", _json_bytes(manifest.to_dict()))
    return manifest
