import json

import numpy as np
import pytest

from rawforge.cli import main
from rawforge.imagecore import LinearImage, load_image, save_image
from rawforge.testimages import corpus


def run(capsys, *argv):
    code = main(["--log-level", "quiet", *map(str, argv)])
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


@pytest.fixture
def linear(tmp_path):
    path = tmp_path / "lin.rfim"
    # kept below 0.9 so a 1.1 white-balance gain never clips
    save_image(LinearImage(0.85 * corpus(1, seed=41, height=32, width=32)[0].data), path)
    return path


def test_isp_forward_invert_roundtrip(tmp_path, linear, capsys):
    code, _ = run(capsys, "isp", "forward", "--input", linear, "--output", tmp_path / "s.rfim",
                  "--wb", "1.1,1,0.9", "--gamma", "srgb")
    assert code == 0
    code, res = run(capsys, "isp", "invert", "--input", tmp_path / "s.rfim", "--output", tmp_path / "l.rfim",
                    "--reference", linear)
    assert code == 0 and res["psnr"] >= 80


def test_stage_chain(tmp_path, linear, capsys):
    assert run(capsys, "mosaic", "--input", linear, "--output", tmp_path / "r.rfim", "--pattern", "GBRG")[0] == 0
    assert run(capsys, "--seed", 3, "noise", "add", "--input", tmp_path / "r.rfim", "--output",
               tmp_path / "n.rfim", "--shot", 0.004, "--read", 1e-4)[0] == 0
    first = (tmp_path / "n.rfim").read_bytes()
    run(capsys, "--seed", 3, "--threads", 4, "noise", "add", "--input", tmp_path / "r.rfim", "--output",
        tmp_path / "n.rfim", "--shot", 0.004, "--read", 1e-4)
    assert (tmp_path / "n.rfim").read_bytes() == first
    assert run(capsys, "demosaic", "--input", tmp_path / "n.rfim", "--output", tmp_path / "d.rfim")[0] == 0
    code, res = run(capsys, "eval", "--gt", linear, "--pred", tmp_path / "d.rfim")
    assert code == 0 and set(res) == {"psnr", "ssim", "exact_match", "mask_fraction"}
    code, res = run(capsys, "isp", "forward", "--input", tmp_path / "n.rfim", "--output", tmp_path / "p.png",
                    "--denoise")
    assert code == 0 and load_image(tmp_path / "p.png").data.shape == (32, 32, 3)


def test_noise_estimate(tmp_path, capsys):
    ramp = np.tile(np.linspace(0, 1, 256), (256, 1))[..., None].repeat(3, -1)
    save_image(LinearImage(ramp), tmp_path / "ramp.rfim")
    run(capsys, "mosaic", "--input", tmp_path / "ramp.rfim", "--output", tmp_path / "r.rfim")
    run(capsys, "noise", "add", "--input", tmp_path / "r.rfim", "--output", tmp_path / "n.rfim",
        "--shot", 0.01, "--read", 0.001)
    code, res = run(capsys, "noise", "estimate", "--input", tmp_path / "n.rfim", "--gt", tmp_path / "r.rfim")
    assert code == 0
    assert res["shot"] == pytest.approx(0.01, rel=0.15) and res["read"] == pytest.approx(0.001, rel=0.15)


def test_degrade_records_stages(tmp_path, capsys):
    save_image(corpus(1, seed=42, height=48, width=48)[0], tmp_path / "hq.png")
    code, res = run(capsys, "--seed", 2, "degrade", "--input", tmp_path / "hq.png", "--output", tmp_path / "lq.png")
    assert code == 0 and len(res["stages"]) == 6
    assert load_image(tmp_path / "lq.png").data.shape == (48, 48, 3)


def test_config_with_noise_stage_is_validation_error(tmp_path, capsys):
    save_image(corpus(1, seed=42, height=16, width=16)[0], tmp_path / "hq.png")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"degradation": {"stages": [{"noise": {"sigma": 3}}]}}))
    code, _ = run(capsys, "--config", cfg, "degrade", "--input", tmp_path / "hq.png", "--output", tmp_path / "o.png")
    assert code == 1 and not (tmp_path / "o.png").exists()


def test_config_schema_violation(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"degradation": {"stages": [{"blur": {"sigma": "wide"}}]}}))
    code, _ = run(capsys, "synth", "run", "--src", tmp_path, "--out", tmp_path / "o", "--config", cfg)
    assert code == 1


def test_missing_input_is_io_error(tmp_path, capsys):
    code, _ = run(capsys, "demosaic", "--input", tmp_path / "none.rfim", "--output", tmp_path / "o.rfim")
    assert code == 2 and not (tmp_path / "o.rfim").exists()


def test_unknown_command_and_bad_flag(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["eval", "--gt", "a.png"]) == 1


def test_threads_zero_rejected(tmp_path, capsys):
    (tmp_path / "src").mkdir()
    code, _ = run(capsys, "--threads", 0, "synth", "run", "--src", tmp_path / "src", "--out", tmp_path / "o")
    assert code == 1


def test_threads_env_fallback(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("RAWFORGE_THREADS", "0")
    (tmp_path / "src").mkdir()
    code, _ = run(capsys, "synth", "run", "--src", tmp_path / "src", "--out", tmp_path / "o")
    assert code == 1


def test_synth_run_exit_code_reflects_failures(tmp_path, capsys):
    src = tmp_path / "src"
    src.mkdir()
    save_image(corpus(1, seed=43, height=16, width=16)[0], src / "a.png")
    code, res = run(capsys, "synth", "run", "--src", src, "--out", tmp_path / "o", "--seed", 1, "--round-robin")
    assert code == 0 and res["records"] == 1
    (src / "b.png").write_bytes(b"junk")
    code, res = run(capsys, "synth", "run", "--src", src, "--out", tmp_path / "o", "--seed", 1)
    assert code != 0 and res["failure_count"] == 1


def test_stats_latent(tmp_path, capsys):
    np.save(tmp_path / "z.npy", np.array([-1.0, 1.0] * 8).reshape(1, 2, 2, 4))
    code, res = run(capsys, "stats", "latent", "--input", tmp_path / "z.npy")
    assert code == 0 and res["mean"] == 0.0 and res["sigma"] == 1.0
    np.save(tmp_path / "bad.npy", np.zeros((3, 3)))
    assert run(capsys, "stats", "latent", "--input", tmp_path / "bad.npy")[0] == 1


def test_gradcheck(capsys):
    code, res = run(capsys, "gradcheck", "--pixels", 20, "--samples", 48, "--cases", 6)
    assert code == 0 and res["passed"] and res["jvp_max_rel_err"] < 1e-3


def test_selftest_report_deterministic(capsys):
    code, first = run(capsys, "selftest", "--only", "tone_inverse", "metrics_oracle", "ptp_jvp_gradcheck")
    assert code == 0 and first["failed"] == []
    assert first["gradcheck_max_rel_err"] < 1e-3
    assert set(first["tolerances"]) == {"tone_inverse", "metrics_oracle", "ptp_jvp_gradcheck"}
    _, second = run(capsys, "selftest", "--only", "tone_inverse", "metrics_oracle", "ptp_jvp_gradcheck")
    assert first == second


@pytest.mark.slow
def test_full_selftest(capsys):
    code, report = run(capsys, "selftest")
    assert code == 0 and report["failed"] == [] and len(report["passed"]) == 13
