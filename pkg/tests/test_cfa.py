import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rawforge.cfa import channel_masks, demosaic, demosaic_malvar, mosaic, pattern_at_offset, prefilter
from rawforge.imagecore import BayerPattern, CaptureMetadata, LinearImage, RawImage
from rawforge.metrics import psnr
from rawforge.testimages import corpus

PATTERNS = [p.value for p in BayerPattern]


@pytest.mark.parametrize("pattern, dx, dy, expect", [
    ("RGGB", 1, 0, "GRBG"),
    ("RGGB", 0, 1, "GBRG"),
    ("RGGB", 1, 1, "BGGR"),
    ("GBRG", 2, 2, "GBRG"),
])
def test_pattern_at_offset(pattern, dx, dy, expect):
    assert pattern_at_offset(pattern, dx, dy) == BayerPattern(expect)


@pytest.mark.parametrize("pattern", PATTERNS)
def test_pattern_at_offset_matches_cropped_mosaic(pattern):
    x = LinearImage(np.random.default_rng(0).uniform(size=(8, 8, 3)))
    full = mosaic(x, pattern).data
    shifted = mosaic(LinearImage(x.data[1:7, 1:7]), pattern_at_offset(pattern, 1, 1)).data
    assert np.array_equal(full[1:7, 1:7], shifted)


@pytest.mark.parametrize("pattern", PATTERNS)
def test_masks_partition_sites(pattern):
    m = channel_masks(pattern, 6, 8)
    assert np.array_equal(m.sum(axis=0), np.ones((6, 8)))
    assert m[1].sum() == 24 and m[0].sum() == m[2].sum() == 12


def test_constant_image_mosaic():
    x = LinearImage(np.broadcast_to([0.2, 0.5, 0.7], (4, 4, 3)))
    assert np.allclose(mosaic(x, "RGGB").data[:2, :2], [[0.2, 0.5], [0.5, 0.7]])


def test_mosaic_records_pattern_and_keeps_meta():
    meta = CaptureMetadata("RGGB", wb_gains=(2.0, 1.0, 1.5), seed=9)
    r = mosaic(LinearImage(np.zeros((4, 4, 3))), "GBRG", meta)
    assert r.pattern == BayerPattern.GBRG and r.meta.wb_gains == (2.0, 1.0, 1.5)


def test_mosaic_odd_dims():
    with pytest.raises(ValueError):
        mosaic(LinearImage(np.zeros((3, 4, 3))), "RGGB")


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(PATTERNS), st.sampled_from(["bilinear", "malvar"]), st.integers(0, 2**31))
def test_demosaic_passes_through_sampled_sites(pattern, method, seed):
    r = mosaic(LinearImage(np.random.default_rng(seed).uniform(size=(12, 10, 3))), pattern)
    back = demosaic(r, method).data
    idx = BayerPattern(pattern).quad
    for i in range(2):
        for j in range(2):
            assert np.array_equal(back[i::2, j::2, idx[i, j]], r.data[i::2, j::2])


@pytest.mark.parametrize("pattern", PATTERNS)
@pytest.mark.parametrize("method", ["bilinear", "malvar"])
def test_constant_colour_reconstructed(pattern, method):
    c = np.array([0.3, 0.6, 0.45])
    r = mosaic(LinearImage(np.broadcast_to(c, (10, 12, 3))), pattern)
    assert np.allclose(demosaic(r, method).data, c, atol=1e-6)


@pytest.mark.parametrize("pattern", PATTERNS)
def test_malvar_exact_on_gray_ramp(pattern):
    yy, xx = np.mgrid[0:16, 0:16]
    ramp = (0.1 + 0.02 * xx + 0.03 * yy)[..., None].repeat(3, axis=-1) / 1.5
    r = mosaic(LinearImage(ramp), pattern)
    # mirror padding folds the ramp at the border, so check where the 5x5 support fits
    assert np.allclose(demosaic(r, "malvar").data[2:-2, 2:-2], ramp[2:-2, 2:-2], atol=1e-5)


def test_malvar_beats_bilinear_on_corpus():
    for k, img in enumerate(corpus(4, seed=3)):
        lin = LinearImage(img.data)
        r = mosaic(lin, PATTERNS[k])
        pb = psnr(demosaic(r, "bilinear"), lin)
        assert pb >= 30.0
        assert psnr(demosaic(r, "malvar"), lin) >= pb


def test_malvar_needs_six_pixels():
    with pytest.raises(ValueError):
        demosaic_malvar(RawImage(np.zeros((4, 4)), CaptureMetadata()))


def test_unknown_method():
    with pytest.raises(ValueError):
        demosaic(RawImage(np.zeros((8, 8)), CaptureMetadata()), "ahd")


def test_demosaic_needs_metadata():
    with pytest.raises(ValueError):
        demosaic(RawImage(np.zeros((8, 8))))


def test_prefilter_keeps_channels_apart():
    # a flat colour must survive: each CFA sub-lattice is smoothed on its own
    r = mosaic(LinearImage(np.broadcast_to([0.1, 0.8, 0.4], (16, 16, 3))), "BGGR")
    assert np.allclose(prefilter(r).data, r.data, atol=1e-6)


def test_prefilter_reduces_noise():
    rng = np.random.default_rng(8)
    r = RawImage(np.clip(0.5 + 0.05 * rng.standard_normal((64, 64)), 0, 1), CaptureMetadata())
    assert prefilter(r).data.var() < 0.5 * r.data.var()
