"""``rawforge`` command-line interface.

Exit codes: 0 success, 1 validation error, 2 IO error, 3 check failure.
Machine-readable results go to stdout as JSON; summaries go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .cfa import demosaic, mosaic
from .config import load_config
from .degrade import apply_stages, resolve_stages
from .imagecore import (
    CaptureMetadata,
    ImageFormatError,
    LinearImage,
    RawImage,
    SrgbImage,
    decode_rfim,
    load_image,
    read_sidecar,
    save_image,
)
from .metrics import compare, latent_scaling_factor
from .noise import add_shot_read_noise, estimate_noise_curve
from .ptp import Gamma, PtpParams, ptp_forward, ptp_inverse
from .rng import param_generator
from .selftest import SUITES, descent_failures, jvp_max_rel_err, loss_grad_max_rel_err, run_selftest
from .synth import feed_forward_isp, run_manifest

log = logging.getLogger("rawforge")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_CHECK = 0, 1, 2, 3
LOG_LEVELS = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for IO errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def _threads(value) -> int:
    if value in (None, "auto"):
        return os.cpu_count() or 1
    n = int(value)
    if n < 1:
        raise ValueError("--threads must be >= 1")
    return n


def _floats(text: str, n: int) -> tuple:
    vals = tuple(float(v) for v in text.replace(" ", "").split(","))
    if len(vals) != n:
        raise ValueError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def _ptp_from_dict(d: dict) -> PtpParams:
    ccm = np.asarray(d.get("ccm", np.eye(3)), dtype=np.float64).reshape(3, 3)
    return PtpParams(
        tuple(d.get("wb_gains", (1.0, 1.0, 1.0))),
        tuple(map(tuple, ccm)),
        Gamma.parse(d.get("gamma", "power:2.2")),
        d.get("tone", "smoothstep"),
    )


def _ptp_sidecar(p: PtpParams) -> dict:
    return {"wb_gains": list(p.wb_gains), "ccm": [v for row in p.ccm for v in row],
            "gamma": str(p.gamma), "tone": p.tone}


def _resolve_ptp(args, input_path) -> PtpParams:
    """``--params`` file, then explicit flags, then the input's sidecar, then defaults."""
    if args.params:
        return _ptp_from_dict(json.loads(Path(args.params).read_text()))
    side = read_sidecar(input_path) or {}
    d = {k: side[k] for k in ("wb_gains", "ccm", "gamma", "tone") if k in side}
    if args.wb:
        d["wb_gains"] = _floats(args.wb, 3)
    if args.ccm:
        d["ccm"] = _floats(args.ccm, 9)
    if args.gamma:
        d["gamma"] = args.gamma
    if args.tone:
        d["tone"] = args.tone
    return _ptp_from_dict(d)


def _load_raw(path) -> RawImage:
    img = load_image(path)
    if not isinstance(img, RawImage):
        raise ImageFormatError(f"{path} is not a RAW frame")
    return img


def _load_rgb(path, domain) -> LinearImage | SrgbImage:
    img = load_image(path, domain=domain)
    if isinstance(img, RawImage):
        raise ImageFormatError(f"{path} is a RAW frame, expected a 3-channel image")
    return img


def _reference_psnr(out, reference):
    if reference is None:
        return {}
    ref = load_image(reference, domain=out.domain)
    return compare(ref, out)


# -- subcommands ---------------------------------------------------------------------

def cmd_synth(args):
    cfg = load_config(args.config)
    if args.scale is not None:
        cfg = replace(cfg, scale=args.scale)
    t0 = time.perf_counter()
    manifest = run_manifest(args.src, args.out, cfg, args.seed, pattern=args.pattern,
                            ddnet_pairs=args.ddnet_pairs, threads=_threads(args.threads))
    log.info("synthesized %d records (%d failures) in %.1fs", len(manifest.records),
             manifest.failure_count, time.perf_counter() - t0)
    _emit({"records": len(manifest.records), "failure_count": manifest.failure_count,
           "manifest": str(Path(args.out) / "manifest.json")})
    return EXIT_OK if manifest.failure_count == 0 else EXIT_VALIDATION


def cmd_degrade(args):
    cfg = load_config(args.config).degradation
    hq = _load_rgb(args.input, "srgb")
    stages = resolve_stages(cfg, param_generator(args.seed))
    out = apply_stages(hq, stages)
    save_image(SrgbImage(np.clip(out.data, 0, 1)), args.output, bitdepth=args.bitdepth,
               extra_meta={"degradation": [st.to_dict() for st in stages]})
    _emit({"output": args.output, "stages": [st.to_dict() for st in stages]})
    return EXIT_OK


def cmd_isp_forward(args):
    img = load_image(args.input)
    if isinstance(img, RawImage):
        out = feed_forward_isp(img, denoise=args.denoise, method=args.method)
        p = PtpParams.from_meta(img.meta)
    else:
        # any 3-channel input is taken as scene-linear here
        p = _resolve_ptp(args, args.input)
        out = ptp_forward(LinearImage(img.data), p)
    save_image(out, args.output, bitdepth=args.bitdepth, extra_meta=_ptp_sidecar(p) | {"domain": "srgb"})
    _emit({"output": args.output} | _reference_psnr(out, args.reference))
    return EXIT_OK


def cmd_isp_invert(args):
    img = _load_rgb(args.input, "srgb")
    p = _resolve_ptp(args, args.input)
    out = ptp_inverse(img, p)
    save_image(out, args.output, bitdepth=args.bitdepth, extra_meta=_ptp_sidecar(p))
    _emit({"output": args.output} | _reference_psnr(out, args.reference))
    return EXIT_OK


def cmd_mosaic(args):
    img = _load_rgb(args.input, "linear")
    side = read_sidecar(args.input) or {}
    meta = CaptureMetadata.from_dict({"pattern": args.pattern} | {
        k: side[k] for k in ("wb_gains", "ccm", "gamma", "tone") if k in side})
    out = mosaic(LinearImage(img.data), args.pattern, meta)
    save_image(out, args.output, bitdepth=args.bitdepth)
    _emit({"output": args.output, "pattern": out.pattern.value})
    return EXIT_OK


def cmd_demosaic(args):
    raw = _load_raw(args.input)
    out = demosaic(raw, args.method)
    save_image(out, args.output, bitdepth=args.bitdepth, extra_meta=raw.meta.to_dict() | {"domain": "linear"})
    _emit({"output": args.output, "method": args.method})
    return EXIT_OK


def cmd_noise_add(args):
    raw = _load_raw(args.input)
    out = add_shot_read_noise(raw, (args.shot, args.read), args.seed, clip=not args.no_clip,
                              chunks=_threads(args.threads))
    save_image(out, args.output)
    _emit({"output": args.output, "shot": args.shot, "read": args.read, "seed": args.seed})
    return EXIT_OK


def cmd_noise_estimate(args):
    shot, read = estimate_noise_curve(_load_raw(args.input), _load_raw(args.gt), n_bins=args.bins)
    _emit({"shot": shot, "read": read})
    return EXIT_OK


def cmd_eval(args):
    gt, pred = load_image(args.gt), load_image(args.pred)
    a, b = gt.data.astype(np.float64), pred.data.astype(np.float64)
    res = compare(a, b, luma_only=args.luma_only and a.ndim == 3)
    res["mask_fraction"] = float(np.mean((b <= 0.0) | (b >= 1.0)))
    _emit(res)
    log.info("PSNR %.3f dB  SSIM %.5f", res["psnr"], res["ssim"])
    return EXIT_OK


def cmd_stats_latent(args):
    path = Path(args.input)
    if path.suffix.lower() == ".npy":
        z = np.load(path, allow_pickle=False)
    else:
        z = decode_rfim(path.read_bytes())[None]
    mean, sigma = latent_scaling_factor(z)
    _emit({"mean": mean, "sigma": sigma, "shape": list(z.shape)})
    return EXIT_OK


def cmd_gradcheck(args):
    jvp, count = jvp_max_rel_err(args.seed, args.pixels)
    loss = loss_grad_max_rel_err(args.seed, args.samples)
    bad = descent_failures(args.seed, args.cases)
    ok = jvp < 1e-3 and loss < 1e-3 and bad == 0
    _emit({"jvp_max_rel_err": jvp, "jvp_pixels": count, "loss_grad_max_rel_err": loss,
           "descent_failures": bad, "tolerance": 1e-3, "passed": ok})
    return EXIT_OK if ok else EXIT_CHECK


def cmd_selftest(args):
    t0 = time.perf_counter()
    report = run_selftest(args.seed, args.only)
    log.info("selftest: %d passed, %d failed in %.1fs", len(report["passed"]), len(report["failed"]),
             time.perf_counter() - t0)
    _emit(report)
    return EXIT_OK if not report["failed"] else EXIT_CHECK


# -- parser ---------------------------------------------------------------------------

def _global_options(parser, suppress: bool):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(0), help="master seed (u64)")
    parser.add_argument("--threads", default=default(os.environ.get("RAWFORGE_THREADS", "1")),
                        help="worker threads, or 'auto' (env RAWFORGE_THREADS)")
    parser.add_argument("--log-level", choices=list(LOG_LEVELS), default=default("info"))
    parser.add_argument("--config", default=default(None), help="JSON config file")


def _ptp_flags(parser):
    parser.add_argument("--params", help="JSON file with wb_gains, ccm, gamma, tone")
    parser.add_argument("--wb", help="white-balance gains r,g,b")
    parser.add_argument("--ccm", help="9 row-major CCM values")
    parser.add_argument("--gamma", help="srgb or power:<exponent>")
    parser.add_argument("--tone", choices=["smoothstep", "identity"])
    parser.add_argument("--reference", help="print PSNR/SSIM of the output against this image")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    _global_options(common, suppress=True)

    p = _Parser(prog="rawforge", description="Synthetic RAW-domain data pipeline.")
    p.add_argument("--version", action="version", version=f"rawforge {__version__}")
    _global_options(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, parent=sub, **kw):
        sp = parent.add_parser(name, parents=[common], **kw)
        sp.set_defaults(func=func)
        return sp

    synth = sub.add_parser("synth", help="corpus synthesis").add_subparsers(dest="synth_cmd", required=True,
                                                                             parser_class=_Parser)
    s = add("run", cmd_synth, synth, help="synthesize training pairs for every source image")
    s.add_argument("--src", required=True)
    s.add_argument("--out", required=True)
    group = s.add_mutually_exclusive_group()
    group.add_argument("--pattern", choices=["RGGB", "BGGR", "GRBG", "GBRG"])
    group.add_argument("--round-robin", action="store_true", help="cycle the four patterns (default)")
    s.add_argument("--ddnet-pairs", action="store_true", help="also write undegraded RAW pairs")
    s.add_argument("--scale", type=float, help="LQ/HQ size ratio")

    s = add("degrade", cmd_degrade, help="apply sampled detail degradation to an sRGB image")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--bitdepth", type=int, default=16, choices=[8, 16])

    isp = sub.add_parser("isp", help="post tone processing").add_subparsers(dest="isp_cmd", required=True,
                                                                             parser_class=_Parser)
    s = add("forward", cmd_isp_forward, isp, help="RAW or linear -> sRGB")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--bitdepth", type=int, default=16, choices=[8, 16])
    s.add_argument("--denoise", action="store_true", help="pre-filter RAW before demosaicing")
    s.add_argument("--method", choices=["malvar", "bilinear"], default="malvar")
    _ptp_flags(s)
    s = add("invert", cmd_isp_invert, isp, help="sRGB -> linear")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--bitdepth", type=int, default=16, choices=[8, 16])
    _ptp_flags(s)

    s = add("mosaic", cmd_mosaic, help="linear RGB -> Bayer RAW")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--pattern", choices=["RGGB", "BGGR", "GRBG", "GBRG"], default="RGGB")
    s.add_argument("--bitdepth", type=int, default=16, choices=[8, 16])

    s = add("demosaic", cmd_demosaic, help="Bayer RAW -> linear RGB")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--method", choices=["malvar", "bilinear"], default="malvar")
    s.add_argument("--bitdepth", type=int, default=16, choices=[8, 16])

    noise = sub.add_parser("noise", help="sensor noise").add_subparsers(dest="noise_cmd", required=True,
                                                                         parser_class=_Parser)
    s = add("add", cmd_noise_add, noise, help="add shot/read noise to a RAW frame")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--shot", type=float, required=True)
    s.add_argument("--read", type=float, required=True)
    s.add_argument("--no-clip", action="store_true", help="keep the pre-clamp values (RFIM output only)")
    s = add("estimate", cmd_noise_estimate, noise, help="fit shot/read parameters from a noisy/clean pair")
    s.add_argument("--input", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--bins", type=int, default=16)

    s = add("eval", cmd_eval, help="PSNR / SSIM between two images")
    s.add_argument("--gt", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--luma-only", action="store_true")

    stats = sub.add_parser("stats", help="statistics").add_subparsers(dest="stats_cmd", required=True,
                                                                        parser_class=_Parser)
    s = add("latent", cmd_stats_latent, stats, help="grand mean and sigma of a latent batch (.npy or .rfim)")
    s.add_argument("--input", required=True)

    s = add("gradcheck", cmd_gradcheck, help="analytic vs finite-difference derivatives")
    s.add_argument("--pixels", type=int, default=100, help="pixels per parameter set")
    s.add_argument("--samples", type=int, default=500, help="loss-gradient entries checked")
    s.add_argument("--cases", type=int, default=50, help="descent-direction cases")

    s = add("selftest", cmd_selftest, help="run the embedded invariant suites")
    s.add_argument("--only", nargs="+", choices=list(SUITES))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=LOG_LEVELS[args.log_level], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        return args.func(args)
    except (FileNotFoundError, PermissionError, IsADirectoryError, ImageFormatError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (ValueError, jsonschema.ValidationError) as exc:
        log.error("%s", getattr(exc, "message", exc))
        return EXIT_VALIDATION
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
