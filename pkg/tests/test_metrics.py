"""PSNR/SSIM against brute-force oracles, symmetry, degradation ordering."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqmosaic import bayer, metrics
from freqmosaic.errors import ContractViolation


def ssim_oracle(a, b, win_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Direct sliding-window double-loop SSIM (weighted moments per window)."""
    win = metrics.gaussian_window(win_size, sigma)
    c1, c2 = k1 ** 2, k2 ** 2
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    h, w, ch = a.shape
    vals = []
    for c in range(ch):
        for i in range(h - win_size + 1):
            for j in range(w - win_size + 1):
                x = a[i:i + win_size, j:j + win_size, c]
                y = b[i:i + win_size, j:j + win_size, c]
                mx = (win * x).sum()
                my = (win * y).sum()
                sxx = (win * x * x).sum() - mx * mx
                syy = (win * y * y).sum() - my * my
                sxy = (win * x * y).sum() - mx * my
                vals.append(((2 * mx * my + c1) * (2 * sxy + c2))
                            / ((mx * mx + my * my + c1) * (sxx + syy + c2)))
    return float(np.mean(vals))


class TestPsnr:
    def test_identical_capped(self, rng):
        img = rng.uniform(size=(8, 8, 3))
        assert metrics.psnr(img, img) == 99.0

    def test_uniform_error_twenty_db(self):
        a = np.full((16, 16, 3), 0.5)
        b = np.full((16, 16, 3), 0.6)
        assert metrics.psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_matches_mse_oracle(self, rng):
        a = rng.uniform(size=(12, 9, 3))
        b = rng.uniform(size=(12, 9, 3))
        want = 10.0 * np.log10(1.0 / np.mean((a - b) ** 2))
        assert metrics.psnr(a, b) == pytest.approx(want, abs=1e-9)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            metrics.psnr(np.zeros((4, 4, 3)), np.zeros((4, 6, 3)))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_symmetry(self, seed):
        r = np.random.default_rng(seed)
        a = r.uniform(size=(6, 6, 3))
        b = r.uniform(size=(6, 6, 3))
        assert abs(metrics.psnr(a, b) - metrics.psnr(b, a)) < 1e-12


class TestSsim:
    def test_identical_is_one(self, rng):
        img = rng.uniform(size=(16, 16, 3))
        assert metrics.ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_contrast_reversal_low(self, rng):
        img = (rng.uniform(size=(24, 24)) > 0.5).astype(np.float64)
        assert metrics.ssim(img, 1.0 - img) < 0.5

    def test_matches_double_loop_oracle(self, rng):
        a = rng.uniform(size=(16, 16, 3))
        b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
        assert metrics.ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-9)

    def test_grayscale_oracle(self, rng):
        a = rng.uniform(size=(14, 18))
        b = rng.uniform(size=(14, 18))
        assert metrics.ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-9)

    def test_bounded(self, rng):
        for _ in range(5):
            a = rng.uniform(size=(12, 12, 3))
            b = rng.uniform(size=(12, 12, 3))
            assert -1.0 <= metrics.ssim(a, b) <= 1.0

    def test_symmetry(self, rng):
        a = rng.uniform(size=(12, 12, 3))
        b = rng.uniform(size=(12, 12, 3))
        assert abs(metrics.ssim(a, b) - metrics.ssim(b, a)) < 1e-12

    def test_small_image_rejected(self):
        with pytest.raises(ContractViolation):
            metrics.ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestMonotoneDegradation:
    def test_noise_ordering_over_trials(self, rng):
        img = rng.uniform(size=(64, 64, 3))
        for trial in range(20):
            n1 = bayer.add_noise(img, bayer.NoiseSpec(5.0, 1000 + trial))
            n2 = bayer.add_noise(img, bayer.NoiseSpec(15.0, 1000 + trial))
            assert metrics.psnr(img, n1) > metrics.psnr(img, n2)


class TestReport:
    def test_mean_is_arithmetic_mean(self, rng):
        pairs = []
        for i in range(3):
            a = rng.uniform(size=(16, 16, 3))
            b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
            pairs.append((f"img{i}", a, b))
        report = metrics.evaluate_pairs(pairs)
        assert report.mean_psnr == pytest.approx(np.mean(report.psnr_values))
        assert report.mean_ssim == pytest.approx(np.mean(report.ssim_values))

    def test_csv_layout(self, rng):
        a = rng.uniform(size=(16, 16, 3))
        report = metrics.evaluate_pairs([("x", a, a)])
        lines = report.to_csv().strip().splitlines()
        assert lines[0] == "name,psnr_db,ssim"
        assert lines[1].startswith("x,99.0000,1.000000")
        assert lines[-1].startswith("MEAN,")
