import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage.metrics import structural_similarity

from semjpeg import metrics
from semjpeg.jpeg import decode, encode
from corpus import natural_corpus


def psnr_oracle(a, b):
    total = 0.0
    count = 0
    for v, w in zip(a.reshape(-1).tolist(), b.reshape(-1).tolist()):
        total += (v - w) ** 2
        count += 1
    return 10 * math.log10(255 ** 2 / (total / count))


def test_psnr_identical_is_sentinel():
    a = np.random.default_rng(0).integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
    assert metrics.psnr(a, a) == math.inf
    assert metrics.format_value(metrics.psnr(a, a)) == "inf"


def test_psnr_uniform_difference_of_one():
    a = np.full((10, 10, 3), 100, np.uint8)
    assert metrics.psnr(a, a + 1) == pytest.approx(10 * math.log10(255 ** 2), abs=1e-12)
    assert metrics.psnr(a, a + 1) == pytest.approx(48.1308, abs=1e-4)


def test_psnr_matches_loop_oracle():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 256, size=(17, 13, 3), dtype=np.uint8)
    b = rng.integers(0, 256, size=(17, 13, 3), dtype=np.uint8)
    assert metrics.psnr(a, b) == pytest.approx(psnr_oracle(a, b), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_psnr_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, 256, size=(2, 9, 7, 3), dtype=np.uint8)
    assert metrics.psnr(a, b) == metrics.psnr(b, a)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        metrics.psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_psnr_s_full_and_empty_maps():
    rng = np.random.default_rng(2)
    a, b = rng.integers(0, 256, size=(2, 12, 12, 3), dtype=np.uint8)
    assert abs(metrics.psnr_s(a, b, np.ones((12, 12))) - metrics.psnr(a, b)) <= 1e-12
    assert metrics.psnr_s(a, b, np.zeros((12, 12))) is None
    assert metrics.format_value(metrics.psnr_s(a, b, np.zeros((12, 12)))) == "na"


def test_psnr_s_distortion_outside_region():
    a = np.random.default_rng(3).integers(0, 200, size=(8, 8, 3), dtype=np.uint8)
    b = a.copy()
    b[:, 4:] += 5
    sal = np.zeros((8, 8))
    sal[:, :4] = 1.0
    assert metrics.psnr_s(a, b, sal) == math.inf
    assert math.isfinite(metrics.psnr(a, b))


def test_psnr_s_cutoff_is_strict():
    a = np.zeros((2, 2, 3), np.uint8)
    b = a + 3
    assert metrics.psnr_s(a, b, np.full((2, 2), 0.5)) is None
    assert metrics.psnr_s(a, b, np.full((2, 2), 0.5), cutoff=0.4) is not None
    with pytest.raises(ValueError):
        metrics.psnr_s(a, b, np.ones((3, 3)))


def test_ssim_identical_is_one():
    _, img = natural_corpus()[0]
    assert metrics.ssim(img, img) == 1.0
    assert metrics.ms_ssim(img, img) == 1.0


def test_ssim_matches_skimage_reference():
    _, img = natural_corpus()[0]
    deg = decode(encode(img, 20))
    ya, yb = metrics.luma(img), metrics.luma(deg)
    ref_map = structural_similarity(ya, yb, data_range=255, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False, full=True)[1]
    # our window is valid-only; compare on the interior where both are defined
    assert metrics.ssim(img, deg) == pytest.approx(ref_map[5:-5, 5:-5].mean(), abs=1e-3)


def test_ssim_constant_images_closed_form():
    a = np.full((20, 20, 3), 100, np.uint8)
    b = np.full((20, 20, 3), 110, np.uint8)
    c1 = (0.01 * 255) ** 2
    want = (2 * 100 * 110 + c1) / (100 ** 2 + 110 ** 2 + c1)
    assert metrics.ssim(a, b) == pytest.approx(want, abs=1e-9)
    # too small for the sliding window: single global window gives the same here
    assert metrics.ssim(a[:5, :5], b[:5, :5]) == pytest.approx(want, abs=1e-12)


def test_ssim_inverted_image_is_low():
    for _, img in natural_corpus()[:6]:
        assert metrics.ssim(img, 255 - img) < 0.3


def test_ssim_invariant_to_identical_row_reversal():
    # windows make arbitrary shuffles change the score; reversal keeps every window intact
    rng = np.random.default_rng(4)
    _, img = natural_corpus()[2]
    a = img[:64, :64]
    b = np.clip(a.astype(int) + rng.integers(-20, 21, size=a.shape), 0, 255).astype(np.uint8)
    assert metrics.ssim(a[::-1], b[::-1]) == pytest.approx(metrics.ssim(a, b), abs=1e-12)
    assert metrics.ssim(a[:, ::-1], b[:, ::-1]) == pytest.approx(metrics.ssim(a, b), abs=1e-12)


def test_ms_ssim_size_limit():
    with pytest.raises(ValueError):
        metrics.ms_ssim(np.zeros((175, 300, 3)), np.zeros((175, 300, 3)))
    assert metrics.MS_SSIM_MIN_SIDE == 176


def test_ms_ssim_monotone_over_ladder():
    for _, img in natural_corpus()[:3]:
        values = [metrics.ms_ssim(img, decode(encode(img, q))) for q in (30, 40, 50, 60, 70)]
        assert values == sorted(values)


def test_measure_and_csv():
    _, img = natural_corpus()[0]
    report = metrics.measure("x", img, img, 123, saliency=np.zeros(img.shape[:2]))
    assert report.row() == ["x", "123", "inf", "na", "1.000000", "1.000000"]
    small = metrics.measure("s", img[:50, :50], img[:50, :50])
    assert small.msssim is None and small.psnr_s is None
    text = metrics.reports_to_csv([report, small])
    assert text.splitlines()[0] == "id,bytes,psnr,psnr_s,ssim,msssim"
    assert text.splitlines()[2] == "s,na,inf,na,1.000000,na"
    with pytest.raises(ValueError):
        metrics.measure("bad", img, img[:10])


def test_parse_value_roundtrip():
    for v in (math.inf, None, 12.5):
        assert metrics.parse_value(metrics.format_value(v)) == v
