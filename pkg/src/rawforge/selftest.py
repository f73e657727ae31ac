"""Embedded invariant suites, runnable from the CLI without pytest.

Each check returns a measured value that is compared against a fixed
tolerance; the report is plain JSON and depends only on the seed.
"""

from __future__ import annotations

import json
import logging
import math
import tempfile
from pathlib import Path

import numpy as np

from .cfa import demosaic, mosaic
from .degrade import DegradationConfig
from .imagecore import BayerPattern, LinearImage, NoiseParams, RawImage, save_image
from .metrics import (
    DegenerateBatchError,
    LossWeights,
    dual_domain_mse,
    latent_scaling_factor,
    psnr,
    rescale_latents,
    ssim,
)
from .noise import add_shot_read_noise, estimate_noise_curve, noise_field
from .ptp import Gamma, PtpParams, ptp_forward, ptp_inverse, ptp_jvp, tone_map, tone_unmap
from .rng import param_generator
from .synth import (
    CAMERA_CCM,
    SynthConfig,
    capture_meta,
    feed_forward_isp,
    run_manifest,
    sample_ptp_params,
    synthesize_pair,
)
from .testimages import corpus

log = logging.getLogger(__name__)

GAMMAS = ("srgb", "power:2.2", "power:2.4")
TONES = ("smoothstep", "identity")
INTERIOR_MARGIN = 0.02


# -- shared helpers ----------------------------------------------------------------

def param_matrix() -> list[PtpParams]:
    """One parameter set per (gamma, tone, ccm) combination used by the gradient checks."""
    ccms = {"identity": np.eye(3), "camera": CAMERA_CCM / CAMERA_CCM.sum(axis=1, keepdims=True)}
    out = []
    for gamma in GAMMAS:
        for tone in TONES:
            for ccm in ccms.values():
                out.append(PtpParams((1.25, 1.0, 0.85), tuple(map(tuple, ccm)), Gamma.parse(gamma), tone))
    return out


def interior_mask(x: np.ndarray, p: PtpParams, margin: float = INTERIOR_MARGIN) -> np.ndarray:
    """Pixels whose white-balanced and colour-corrected values stay ``margin`` inside every clamp."""
    wb = x * np.asarray(p.wb_gains)
    cc = wb @ p.matrix.T
    ok = lambda a: np.all((a > margin) & (a < 1.0 - margin), axis=-1)  # noqa: E731
    return ok(wb) & ok(cc)


def interior_pixels(rng: np.random.Generator, p: PtpParams, n: int) -> np.ndarray:
    picked = []
    while sum(len(a) for a in picked) < n:
        cand = rng.uniform(0.05, 0.95, size=(4 * n, 3))
        picked.append(cand[interior_mask(cand, p)])
    return np.concatenate(picked)[:n]


def sample_nonclipping_params(rng: np.random.Generator, lo: float = 0.05, hi: float = 0.95) -> PtpParams:
    """Synthesis-style PTP parameters under which no pixel of ``[lo, hi]^3`` clips in WB or CCM.

    WB and CCM are linear, so checking the eight cube corners covers the whole cube.
    """
    corners = np.array(np.meshgrid([lo, hi], [lo, hi], [lo, hi], indexing="ij")).reshape(3, -1).T
    while True:
        gamma = GAMMAS[int(rng.integers(len(GAMMAS)))]
        tone = TONES[int(rng.integers(len(TONES)))]
        p = sample_ptp_params(rng, gamma, tone)
        wb = corners * np.asarray(p.wb_gains)
        cc = wb @ p.matrix.T
        if wb.min() >= 0 and wb.max() <= 1 and cc.min() >= 0 and cc.max() <= 1:
            return p


def jvp_max_rel_err(seed: int = 0, n_per_set: int = 100, h: float = 1e-4) -> tuple[float, int]:
    """Worst per-pixel relative error of the analytic JVP against central differences."""
    rng = param_generator(seed)
    worst, count = 0.0, 0
    for p in param_matrix():
        x = interior_pixels(rng, p, n_per_set)
        t = rng.standard_normal(x.shape)
        t /= np.linalg.norm(t, axis=-1, keepdims=True)
        analytic = ptp_jvp(x, t, p).tangent
        fd = (ptp_forward(x + h * t, p) - ptp_forward(x - h * t, p)) / (2 * h)
        err = np.linalg.norm(analytic - fd, axis=-1) / np.maximum(np.linalg.norm(fd, axis=-1), 1e-12)
        worst = max(worst, float(err.max()))
        count += len(x)
    return worst, count


def _loss_case(rng: np.random.Generator, p: PtpParams, size: int = 12):
    pred = interior_pixels(rng, p, size * size).reshape(size, size, 3)
    gt = np.clip(pred + rng.normal(0, 0.05, pred.shape), 0, 1)
    return pred, gt


def loss_grad_max_rel_err(seed: int = 0, n_samples: int = 500, h: float = 1e-4) -> float:
    """Analytic dual-domain gradient vs central differences of the loss value."""
    rng = param_generator(seed + 1)
    w = LossWeights(1.0, 1.0)
    params = param_matrix()
    worst = 0.0
    per_set = math.ceil(n_samples / len(params))
    for p in params:
        pred, gt = _loss_case(rng, p)
        grad = dual_domain_mse(pred, gt, p, w).grad
        flat = rng.choice(pred.size, size=per_set, replace=False)
        for f in flat:
            idx = np.unravel_index(f, pred.shape)
            up, dn = pred.copy(), pred.copy()
            up[idx] += h
            dn[idx] -= h
            fd = (dual_domain_mse(up, gt, p, w).value - dual_domain_mse(dn, gt, p, w).value) / (2 * h)
            err = abs(grad[idx] - fd) / max(abs(fd), abs(grad[idx]), 1e-12)
            worst = max(worst, float(err))
    return worst


def descent_failures(seed: int = 0, cases: int = 50, step: float = 1e-3) -> int:
    """Cases where a step of max size ``step`` along the negative gradient fails to lower the loss."""
    rng = param_generator(seed + 2)
    params = param_matrix()
    bad = 0
    for i in range(cases):
        p = params[i % len(params)]
        pred, gt = _loss_case(rng, p)
        res = dual_domain_mse(pred, gt, p)
        moved = pred - step * res.grad / np.abs(res.grad).max()
        if not dual_domain_mse(moved, gt, p).value < res.value:
            bad += 1
    return bad


# -- suites --------------------------------------------------------------------------

def _ptp_roundtrip(seed):
    rng = param_generator(seed)
    worst = 0.0
    for _ in range(20):
        p = sample_nonclipping_params(rng)
        x = rng.uniform(0.05, 0.95, size=(1000, 3))
        worst = max(worst, float(np.abs(ptp_inverse(ptp_forward(x, p), p) - x).max()))
    return worst, 1e-4


def _tone_inverse(seed):
    y = np.linspace(0.0, 1.0, 10_000)
    return float(np.abs(tone_map(tone_unmap(y)) - y).max()), 1e-6


def _jvp(seed):
    return jvp_max_rel_err(seed, 100)[0], 1e-3


def _loss_grad(seed):
    return loss_grad_max_rel_err(seed, 120), 1e-3


def _loss_descent(seed):
    return float(descent_failures(seed, 12)), 0.0


def _cfa_quads(seed):
    rng = param_generator(seed)
    bad = 0
    for pat in BayerPattern:
        x = rng.uniform(0.05, 0.95, size=(2, 2, 3))
        r = mosaic(LinearImage(x), pat)
        expect = np.take_along_axis(x, pat.quad[..., None], axis=-1)[..., 0]
        bad += int(not np.array_equal(r.data, expect.astype(np.float32)))
        for method in ("bilinear", "malvar"):
            big = LinearImage(rng.uniform(0.05, 0.95, size=(8, 8, 3)))
            rb = mosaic(big, pat)
            back = demosaic(rb, method).data
            sampled = np.take_along_axis(back, np.tile(pat.quad, (4, 4))[..., None], axis=-1)[..., 0]
            bad += int(not np.array_equal(sampled, rb.data))
    return float(bad), 0.0


def _cfa_quality(seed):
    worst_margin = math.inf
    for i, img in enumerate(corpus(4, seed)):
        lin = LinearImage(img.data)
        r = mosaic(lin, list(BayerPattern)[i % 4])
        pb = psnr(demosaic(r, "bilinear"), lin)
        pm = psnr(demosaic(r, "malvar"), lin)
        worst_margin = min(worst_margin, pb - 30.0, pm - pb)
    # value is the shortfall below the required margins, 0 when all hold
    return max(0.0, -worst_margin), 0.0


def _noise_variance(seed):
    x = np.full((1000, 1000), 0.5)
    n = noise_field(x, NoiseParams(0.01, 0.001), seed)
    return abs(float(n.var()) / 0.006 - 1.0), 0.05


def _noise_estimate(seed):
    ramp = np.tile(np.linspace(0.0, 1.0, 512), (512, 1))
    truth = NoiseParams(0.004, 2e-4)
    gt = RawImage(ramp, capture_meta(PtpParams.identity(), "RGGB"))
    noisy = add_shot_read_noise(gt, truth, seed)
    shot, read = estimate_noise_curve(noisy, gt)
    return max(abs(shot / truth.shot - 1), abs(read / truth.read - 1)), 0.10


def _latent(seed):
    rng = param_generator(seed)
    z = rng.standard_normal((4, 4, 250, 250)).astype(np.float32)
    _, sigma = latent_scaling_factor(z)
    _, after = latent_scaling_factor(rescale_latents(z * 3.0, latent_scaling_factor(z * 3.0)[1]))
    try:
        rescale_latents(np.full((1, 1, 2, 2), 5.0), latent_scaling_factor(np.full((1, 1, 2, 2), 5.0))[1])
        degenerate_ok = False
    except DegenerateBatchError:
        degenerate_ok = True
    score = max(abs(sigma - 1.0) / 0.005, abs(after - 1.0) / 1e-6, 0.0 if degenerate_ok else math.inf)
    return float(score), 1.0


def _metrics(seed):
    rng = param_generator(seed)
    a = rng.uniform(0.2, 0.8, size=(16, 16, 3))
    err = max(abs(psnr(a + 0.1, a) - 20.0), abs(psnr(a + 0.01, a) - 40.0))
    if ssim(a, a) != 1.0:
        err = math.inf
    return float(err), 1e-4


def _full_chain(seed):
    ident = SynthConfig(degradation=DegradationConfig.identity(), zero_noise=True)
    worst = math.inf
    for i, hq in enumerate(corpus(4, seed)):
        raw, _, _ = synthesize_pair(hq, ident, list(BayerPattern)[i % 4], seed + i)
        worst = min(worst, psnr(feed_forward_isp(raw), hq))
    return max(0.0, 30.0 - worst), 0.0


def _determinism(seed):
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        (tmp / "src").mkdir()
        for i, img in enumerate(corpus(3, seed, 48, 48)):
            save_image(img, tmp / "src" / f"img{i}.png")
        trees = []
        for threads in (1, 3, 1):
            out = tmp / f"out{len(trees)}"
            run_manifest(tmp / "src", out, SynthConfig(), seed, threads=threads)
            trees.append({str(f.relative_to(out)): f.read_bytes() for f in sorted(out.rglob("*")) if f.is_file()})
    return float(sum(t != trees[0] for t in trees[1:])), 0.0


SUITES = {
    "ptp_roundtrip": _ptp_roundtrip,
    "tone_inverse": _tone_inverse,
    "ptp_jvp_gradcheck": _jvp,
    "loss_gradcheck": _loss_grad,
    "loss_descent": _loss_descent,
    "cfa_quads_passthrough": _cfa_quads,
    "cfa_demosaic_quality": _cfa_quality,
    "noise_variance": _noise_variance,
    "noise_estimate": _noise_estimate,
    "latent_scaling": _latent,
    "metrics_oracle": _metrics,
    "full_chain": _full_chain,
    "determinism": _determinism,
}


def run_selftest(seed: int = 0, only: list[str] | None = None) -> dict:
    """Run the suites and return ``{suite, passed, failed, tolerances, values}``."""
    passed, failed, tolerances, values = [], [], {}, {}
    for name, fn in SUITES.items():
        if only and name not in only:
            continue
        try:
            value, tol = fn(seed)
            ok = value <= tol
        except Exception as exc:  # a crashing suite is a failed suite
            log.error("suite %s raised %s", name, exc)
            value, tol, ok = math.inf, 0.0, False
        (passed if ok else failed).append(name)
        tolerances[name] = tol
        values[name] = value if math.isfinite(value) else None
        log.info("%s %s value=%.3g tol=%.3g", "PASS" if ok else "FAIL", name, value, tol)
    report = {"suite": "rawforge-selftest", "seed": seed, "passed": passed, "failed": failed,
              "tolerances": tolerances, "values": values}
    if "ptp_jvp_gradcheck" in values:
        report["gradcheck_max_rel_err"] = values["ptp_jvp_gradcheck"]
    return report


if __name__ == "__main__":
    print(json.dumps(run_selftest(), indent=2))
