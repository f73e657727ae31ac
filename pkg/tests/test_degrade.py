import math

import numpy as np
import pytest

from rawforge.degrade import (
    DegradationConfig,
    KernelSpec,
    NoiseStageError,
    ResizeSpec,
    apply_stages,
    convolve,
    degrade_detail,
    even_dim,
    jpeg_simulate,
    make_kernel,
    quant_tables,
    resize,
    resize_to,
    resolve_stages,
)
from rawforge.imagecore import SrgbImage
from rawforge.metrics import psnr
from rawforge.rng import param_generator
from rawforge.testimages import corpus

ANNEX_K_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61], [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56], [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77], [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101], [72, 92, 95, 98, 112, 100, 103, 99],
])


def _smooth_image(h=64, w=64):
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    return SrgbImage(np.stack([0.2 + 0.6 * xx, 0.3 + 0.4 * yy, 0.5 + 0.3 * xx * yy], -1))


# -- kernels -------------------------------------------------------------------------

@pytest.mark.parametrize("spec", [
    KernelSpec("iso_gaussian", 7, sigma=0.2),
    KernelSpec("iso_gaussian", 21, sigma=3.0),
    KernelSpec("aniso_gaussian", 15, sigma_x=2.5, sigma_y=0.7, theta=0.6),
    KernelSpec("sinc", 13, cutoff=math.pi / 3),
    KernelSpec("sinc", 21, cutoff=math.pi),
])
def test_kernels_normalized_and_centred(spec):
    k = make_kernel(spec)
    assert k.shape == (spec.size, spec.size)
    assert k.sum() == pytest.approx(1.0)
    r = spec.size // 2
    ax = np.arange(-r, r + 1)
    assert (k.sum(0) * ax).sum() == pytest.approx(0.0, abs=1e-12)
    assert (k.sum(1) * ax).sum() == pytest.approx(0.0, abs=1e-12)


def test_iso_kernel_matches_direct_formula():
    sigma, r = 1.7, 5
    expect = np.array([[math.exp(-(i * i + j * j) / (2 * sigma**2)) for j in range(-r, r + 1)]
                       for i in range(-r, r + 1)])
    assert np.allclose(make_kernel(KernelSpec("iso_gaussian", 11, sigma=sigma)), expect / expect.sum())


def test_aniso_variance_ratio_matches_sampled_moments():
    # sampling a sigma=0.5 Gaussian on the integer grid inflates its variance,
    # so the tap-variance ratio is the sampled one, not (2/0.5)^2 = 16
    k = make_kernel(KernelSpec("aniso_gaussian", 21, sigma_x=2.0, sigma_y=0.5, theta=0.0))
    ax = np.arange(-10, 11, dtype=float)
    var_x = (k.sum(0) * ax**2).sum()
    var_y = (k.sum(1) * ax**2).sum()

    def sampled_var(s):
        g = np.exp(-(ax**2) / (2 * s * s))
        return (g * ax**2).sum() / g.sum()

    assert var_x / var_y == pytest.approx(sampled_var(2.0) / sampled_var(0.5), rel=1e-9)
    assert var_x / var_y == pytest.approx(18.60, abs=0.01)


def test_aniso_rotation_by_quarter_turn_transposes():
    a = make_kernel(KernelSpec("aniso_gaussian", 11, sigma_x=2.0, sigma_y=0.8, theta=0.0))
    b = make_kernel(KernelSpec("aniso_gaussian", 11, sigma_x=2.0, sigma_y=0.8, theta=math.pi / 2))
    assert np.allclose(a, b.T)


def test_sinc_is_low_pass():
    k = make_kernel(KernelSpec("sinc", 21, cutoff=math.pi / 3))
    assert np.allclose(k, k.T) and np.allclose(k, k[::-1])
    checker = np.indices((32, 32)).sum(0) % 2 * 1.0
    out = convolve(checker, k)
    assert out[8:-8, 8:-8].std() < 0.05 * checker.std()


@pytest.mark.parametrize("bad", [
    KernelSpec("iso_gaussian", 8), KernelSpec("iso_gaussian", 7, sigma=0.0),
    KernelSpec("sinc", 7, cutoff=4.0), KernelSpec("box", 7),
])
def test_kernel_validation(bad):
    with pytest.raises(ValueError):
        make_kernel(bad)


def test_convolve_delta_and_size_check():
    img = _smooth_image(16, 16)
    delta = np.zeros((5, 5))
    delta[2, 2] = 1.0
    assert np.allclose(convolve(img, delta).data, img.data)
    with pytest.raises(ValueError):
        convolve(img, np.ones((17, 17)) / 289)


def test_convolve_edge_replication_keeps_constant():
    img = SrgbImage(np.full((12, 12, 3), 0.4))
    assert np.allclose(convolve(img, make_kernel(KernelSpec(size=11, sigma=3.0))).data, 0.4)


# -- resize --------------------------------------------------------------------------

@pytest.mark.parametrize("n, expect", [(0.4, 2), (3.0, 4), (10.9, 10), (11.2, 12), (64.0, 64)])
def test_even_dim(n, expect):
    assert even_dim(n) == expect


@pytest.mark.parametrize("method", ["bilinear", "bicubic", "area"])
@pytest.mark.parametrize("scale", [0.25, 0.5, 0.7, 1.3, 1.5])
def test_resize_keeps_constant(method, scale):
    out = resize(SrgbImage(np.full((20, 24, 3), 0.37)), ResizeSpec(scale, method))
    assert out.data.shape[:2] == (even_dim(20 * scale), even_dim(24 * scale))
    assert np.allclose(out.data, 0.37, atol=1e-6)


def test_resize_scale_one_is_noop():
    img = _smooth_image(16, 20)
    assert resize(img, ResizeSpec(1.0, "bicubic")) is img


def test_area_half_is_block_mean():
    a = np.random.default_rng(0).uniform(size=(8, 12, 3))
    expect = a.reshape(4, 2, 6, 2, 3).mean(axis=(1, 3))
    assert np.allclose(resize_to(a, 4, 6, "area"), expect)


@pytest.mark.parametrize("method", ["bilinear", "bicubic"])
def test_upsampling_reproduces_linear_ramp(method):
    xx = np.arange(16, dtype=float)
    a = np.broadcast_to(0.1 + 0.05 * xx, (16, 16))[..., None].repeat(3, -1)
    out = resize_to(a, 16, 32, method)
    # half-pixel centres: output column j samples input position (j + 0.5) / 2 - 0.5
    src = (np.arange(32) + 0.5) / 2 - 0.5
    inside = (src >= 1) & (src <= 14)
    assert np.allclose(out[4, inside, 0], 0.1 + 0.05 * src[inside])


def test_bicubic_weights_sum_to_one():
    out = resize_to(np.ones((10, 10)), 7, 13, "bicubic")
    assert np.allclose(out, 1.0)


# -- JPEG ------------------------------------------------------------------------------

def test_quality_50_is_annex_k():
    luma, chroma = quant_tables(50)
    assert np.array_equal(luma, ANNEX_K_LUMA)
    assert chroma[0, 0] == 17 and chroma[7, 7] == 99


def test_quality_100_tables_are_ones():
    assert all(np.all(t == 1) for t in quant_tables(100))
    with pytest.raises(ValueError):
        quant_tables(0)


def test_jpeg_psnr_falls_with_quality():
    img = corpus(1, seed=4)[0]
    scores = [psnr(jpeg_simulate(img, q), img) for q in (100, 90, 70, 50, 30, 10)]
    assert scores[0] > 50
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_jpeg_constant_block_error_below_dc_step():
    img = SrgbImage(np.full((16, 16, 3), 0.5))
    out = jpeg_simulate(img, 30)
    dc_step = quant_tables(30)[0][0, 0] / 8.0 / 255.0  # orthonormal DC gain is 8
    assert np.abs(out.data - 0.5).max() <= dc_step


def test_jpeg_dct_matches_explicit_basis():
    # with quality 100 every coefficient is rounded to an integer; replicate that for one block
    rng = np.random.default_rng(2)
    block = rng.uniform(0.3, 0.7, size=(8, 8, 3))
    n = np.arange(8)
    basis = np.sqrt(2 / 8) * np.cos(np.pi * (2 * n[None, :] + 1) * n[:, None] / 16)
    basis[0] /= np.sqrt(2)
    m = np.array([[0.299, 0.587, 0.114], [-0.168736, -0.331264, 0.5], [0.5, -0.418688, -0.081312]])
    ycc = block * 255 @ m.T
    ycc[..., 0] -= 128
    rec = np.empty_like(ycc)
    for c in range(3):
        coef = np.round(basis @ ycc[..., c] @ basis.T)
        rec[..., c] = basis.T @ coef @ basis
    rec[..., 0] += 128
    expect = np.clip(rec @ np.linalg.inv(m).T / 255, 0, 1)
    assert np.allclose(jpeg_simulate(block, 100), expect, atol=1e-5)


def test_jpeg_handles_non_multiple_of_eight():
    out = jpeg_simulate(_smooth_image(10, 14), 60)
    assert out.data.shape == (10, 14, 3)


# -- configuration and sampling -----------------------------------------------------------

@pytest.mark.parametrize("cfg", [
    {"stages": [{"noise": {"sigma": [1, 30]}}]},
    {"stages": [{"blur": {"size": 7}}, {"gaussian_noise": {}}]},
    {"stages": [{"blur": {"family": "noise_blur"}}]},
])
def test_noise_stages_rejected(cfg):
    with pytest.raises(NoiseStageError):
        DegradationConfig.from_dict(cfg)


def test_unknown_stage_rejected():
    with pytest.raises(ValueError):
        DegradationConfig(stages=({"sharpen": {}},))


def test_config_dict_roundtrip():
    cfg = DegradationConfig(second_order=False, seed=3)
    assert DegradationConfig.from_dict(cfg.to_dict()) == cfg


def test_resolution_is_deterministic():
    cfg = DegradationConfig()
    a = [s.to_dict() for s in resolve_stages(cfg, param_generator(9))]
    b = [s.to_dict() for s in resolve_stages(cfg, param_generator(9))]
    c = [s.to_dict() for s in resolve_stages(cfg, param_generator(10))]
    assert a == b and a != c


def test_second_order_repeats_with_fresh_parameters():
    first = resolve_stages(DegradationConfig(second_order=False), param_generator(1))
    both = resolve_stages(DegradationConfig(second_order=True), param_generator(1))
    assert len(first) == 3 and len(both) == 6
    assert [s.kind for s in both] == ["blur", "resize", "compress"] * 2
    assert both[:3] == first and both[3:] != both[:3]


def test_stage_probability_zero_skips():
    cfg = DegradationConfig(stages=({"blur": {"prob": 0.0}}, {"compress": {"quality": 80}}), second_order=False)
    assert [s.kind for s in resolve_stages(cfg, param_generator(0))] == ["compress"]


def test_resolved_ranges():
    rng = param_generator(5)
    for _ in range(40):
        for st in resolve_stages(DegradationConfig(), rng):
            if st.kind == "blur":
                assert 7 <= st.spec.size <= 21 and st.spec.size % 2 == 1
            elif st.kind == "resize":
                assert 0.25 <= st.spec.scale <= 1.5
            else:
                assert 30 <= st.spec <= 95


def test_identity_config_is_near_lossless():
    img = corpus(1, seed=2)[0]
    assert psnr(degrade_detail(img, DegradationConfig.identity()), img) > 55


def test_default_degradation_degrades_and_keeps_size():
    img = corpus(1, seed=2)[0]
    scores = []
    for seed in range(5):
        out = degrade_detail(img, DegradationConfig(seed=seed))
        assert out.data.shape == img.data.shape and isinstance(out, SrgbImage)
        scores.append(psnr(out, img))
    assert np.mean(scores) < 30


def test_target_size_and_oversized_kernel():
    img = corpus(1, seed=2, height=32, width=32)[0]
    stages = resolve_stages(DegradationConfig(stages=(
        {"resize": {"scale": 0.25}}, {"blur": {"size": 21, "sigma": 2.0}}), second_order=False), param_generator(0))
    out = apply_stages(img, stages, target_size=(16, 20))
    assert out.data.shape == (16, 20, 3)
