"""PSNR and SSIM on float images in [0,1], plus directory evaluation.

PSNR is computed jointly over all channels; SSIM uses the canonical 11x11
Gaussian window (sigma 1.5), K1=0.01, K2=0.03, data range 1.0, valid window
positions only, averaged over channels.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

PSNR_CAP_DB = 99.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) in dB, capped at 99.0 when MSE < 1e-12."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"psnr: shapes {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse < 1e-12:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _valid_correlate(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    from numpy.lib.stride_tricks import sliding_window_view

    view = sliding_window_view(img, win.shape)
    return np.einsum("ijuv,uv->ij", view, win, optimize=True)


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01, k2: float = 0.03,
         win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM index over channels and valid window positions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"ssim: shapes {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if min(a.shape[0], a.shape[1]) < win_size:
        raise ContractViolation(f"ssim: image smaller than {win_size}x{win_size} window")

    win = gaussian_window(win_size, sigma)
    c1 = k1 ** 2  # data range 1.0
    c2 = k2 ** 2
    vals = []
    for ch in range(a.shape[2]):
        x = a[:, :, ch]
        y = b[:, :, ch]
        mu_x = _valid_correlate(x, win)
        mu_y = _valid_correlate(y, win)
        sxx = _valid_correlate(x * x, win) - mu_x * mu_x
        syy = _valid_correlate(y * y, win) - mu_y * mu_y
        sxy = _valid_correlate(x * y, win) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
        vals.append(num / den)
    return float(np.mean(vals))


@dataclass
class MetricReport:
    names: list
    psnr_values: list
    ssim_values: list

    @property
    def mean_psnr(self):
        return float(np.mean(self.psnr_values))

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim_values))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["name", "psnr_db", "ssim"])
        for name, p, s in zip(self.names, self.psnr_values, self.ssim_values):
            writer.writerow([name, f"{p:.4f}", f"{s:.6f}"])
        writer.writerow(["MEAN", f"{self.mean_psnr:.4f}", f"{self.mean_ssim:.6f}"])
        return buf.getvalue()


def evaluate_pairs(pairs, parallel_map=map) -> MetricReport:
    """Score (name, predicted, reference) image triples."""
    names = [name for name, _, _ in pairs]
    scores = list(parallel_map(lambda pr: (psnr(pr[1], pr[2]), ssim(pr[1], pr[2])), pairs))
    return MetricReport(
        names=names,
        psnr_values=[s[0] for s in scores],
        ssim_values=[s[1] for s in scores],
    )
