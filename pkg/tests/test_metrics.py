from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dehazekit import metrics
from dehazekit.tensor import ContractError

DATA = Path(__file__).parent / "data" / "ciede2000_pairs.txt"


def load_pairs():
    rows = [line.split() for line in DATA.read_text().splitlines() if line.strip() and not line.startswith("#")]
    arr = np.array([[float(v) for v in r[1:]] for r in rows])
    return arr[:, 0:3], arr[:, 3:6], arr[:, 6]


def rand_img(seed, h=24, w=24):
    return np.random.default_rng(seed).uniform(size=(1, 3, h, w))


def test_reference_pairs_table():
    lab1, lab2, expected = load_pairs()
    assert len(expected) == 34
    got = metrics.delta_e2000(lab1, lab2)
    assert np.abs(got - expected).max() <= 1e-4
    np.testing.assert_allclose(metrics.delta_e2000(lab2, lab1), got, atol=1e-12)


def test_reference_pairs_agree_with_skimage():
    color = pytest.importorskip("skimage.color")
    lab1, lab2, _ = load_pairs()
    np.testing.assert_allclose(metrics.delta_e2000(lab1, lab2), color.deltaE_ciede2000(lab1, lab2), atol=1e-9)


def test_lab_conversion_agrees_with_skimage():
    color = pytest.importorskip("skimage.color")
    x = rand_img(0, 6, 6)
    ours = metrics.srgb_to_lab(x)
    theirs = color.rgb2lab(np.transpose(x[0], (1, 2, 0)), illuminant="D65", observer="2")
    # the two use differently rounded sRGB matrices and white points
    np.testing.assert_allclose(ours[0], theirs, atol=1e-2)


def test_psnr_examples():
    a = rand_img(1) * 0.8
    assert metrics.psnr(a, a) == 100.0
    assert metrics.psnr(a, a + 10 / 255) == pytest.approx(28.13, abs=0.01)
    assert metrics.psnr(a, a + 5 / 255) - metrics.psnr(a, a + 10 / 255) == pytest.approx(6.02, abs=0.01)
    with pytest.raises(ContractError):
        metrics.psnr(a, a[:, :, :4])


def test_ssim_examples():
    a = rand_img(2)
    assert metrics.ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    pattern = 0.5 + 0.4 * np.sign(np.sin(np.arange(24)[:, None] * 0.9 + np.arange(24)[None] * 0.4))
    x = np.repeat(pattern[None, None], 3, axis=1)
    assert metrics.ssim(x, 1.0 - x) < 0
    noisy = np.clip(a + np.random.default_rng(3).normal(0, 0.02, a.shape), 0, 1)
    noisier = np.clip(a + np.random.default_rng(3).normal(0, 0.05, a.shape), 0, 1)
    assert metrics.ssim(a, noisier) < metrics.ssim(a, noisy) < 1.0
    with pytest.raises(ContractError):
        metrics.ssim(a[:, :, :8, :8], a[:, :, :8, :8])


def test_ssim_agrees_with_skimage():
    sk = pytest.importorskip("skimage.metrics")
    a, b = rand_img(4, 32, 40), rand_img(5, 32, 40)
    b = 0.6 * a + 0.4 * b
    ref = sk.structural_similarity(metrics.luma(a)[0], metrics.luma(b)[0], gaussian_weights=True, sigma=1.5,
                                   use_sample_covariance=False, data_range=1.0)
    assert metrics.ssim(a, b) == pytest.approx(ref, abs=1e-6)


def test_ciede2000_identity_and_symmetry():
    a, b = rand_img(6), rand_img(7)
    assert metrics.ciede2000(a, a) == 0
    assert metrics.ciede2000(a, b) == pytest.approx(metrics.ciede2000(b, a), abs=1e-12)


def test_channel_diff_examples():
    a = rand_img(8) * 0.9
    assert metrics.channel_diff(a, a) == (0.0, 0.0, 0.0)
    b = a.copy()
    b[:, 0] += 9.13 / 255
    np.testing.assert_allclose(metrics.channel_diff(a, b), (9.13, 0, 0), atol=1e-9)


def test_channel_histogram():
    h = metrics.channel_histogram(np.full((1, 3, 5, 7), 0.3), bins=16)
    assert h.shape == (3, 16)
    assert np.all((h > 0).sum(axis=1) == 1)
    h = metrics.channel_histogram(rand_img(9, 5, 7), bins=10)
    assert np.all(h.sum(axis=1) == 35)
    with pytest.raises(ContractError):
        metrics.channel_histogram(rand_img(9), bins=1)


def test_histogram_intersection_bounds():
    a = metrics.channel_histogram(rand_img(10))
    assert metrics.histogram_intersection(a, a) == pytest.approx(1.0)
    b = metrics.channel_histogram(np.zeros((1, 3, 4, 4)))
    assert 0 <= metrics.histogram_intersection(a, b) < 0.2


@settings(max_examples=30, deadline=None)
@given(st.floats(0.001, 0.2), st.floats(0.001, 0.2))
def test_psnr_monotone_in_offset(d1, d2):
    a = np.full((1, 3, 4, 4), 0.4)
    if abs(d1 - d2) < 1e-6:
        return
    small, big = sorted((d1, d2))
    assert metrics.psnr(a, a + small) > metrics.psnr(a, a + big)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.005, 0.3))
def test_ciede2000_grows_with_lightness_offset(d):
    a = np.full((1, 3, 2, 2), 0.3)
    assert metrics.ciede2000(a, a + d) < metrics.ciede2000(a, a + d + 0.01)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_metrics_symmetric_and_finite(s1, s2):
    a, b = rand_img(s1, 12, 12), rand_img(s2, 12, 12)
    ra, rb = metrics.evaluate(a, b), metrics.evaluate(b, a)
    for x, y in zip(vars(ra).values(), vars(rb).values()):
        assert np.isfinite(x) and x == pytest.approx(y, abs=1e-9)


def test_csv_round_trip_and_mean_row():
    rows = [(f"img{i}", metrics.evaluate(rand_img(i, 12, 12), rand_img(i + 50, 12, 12))) for i in range(3)]
    back = metrics.reports_from_csv(metrics.reports_to_csv(rows))
    assert [n for n, _ in back] == [n for n, _ in rows]
    for (_, r1), (_, r2) in zip(rows, back):
        assert vars(r1) == vars(r2)
    table = metrics.format_table(rows)
    mean_line = table.splitlines()[-1]
    assert mean_line.startswith("mean")
    expected_psnr = np.mean([r.psnr for _, r in rows])
    assert float(mean_line.split()[1]) == pytest.approx(expected_psnr, abs=0.005)
