"""Bayer CFA simulation, input rearrangement, noise model, a bilinear
demosaicking baseline, and spectrum diagnostics.

Images are float64 arrays in [0,1]: RGB is [H,W,3], a CFA observation is a
single [H,W] plane tagged with its 2x2 pattern phase.  Noise levels sigma
are quoted on the 8-bit scale and applied as sigma/255.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

# channel index recorded at (row % 2, col % 2) for each pattern phase
PATTERNS = {
    "RGGB": np.array([[0, 1], [1, 2]]),
    "GRBG": np.array([[1, 0], [2, 1]]),
    "GBRG": np.array([[1, 2], [0, 1]]),
    "BGGR": np.array([[2, 1], [1, 0]]),
}


@dataclass
class CfaImage:
    """Single-plane Bayer observation plus its pattern phase."""

    plane: np.ndarray  # [H,W] float64 in [0,1]
    pattern: str = "RGGB"

    def __post_init__(self):
        self.plane = np.asarray(self.plane, dtype=np.float64)
        if self.pattern not in PATTERNS:
            raise ContractViolation(f"unknown Bayer pattern {self.pattern!r}")
        h, w = self.plane.shape
        if h % 2 or w % 2:
            raise ContractViolation(f"CFA dimensions must be even, got {h}x{w}")

    @property
    def shape(self):
        return self.plane.shape


@dataclass
class NoiseSpec:
    """Gaussian noise level on the 0-255 scale, fully determined by seed."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ContractViolation("noise sigma must be >= 0")


def channel_index_map(pattern: str, h: int, w: int) -> np.ndarray:
    """[H,W] map of which RGB channel the pattern records at each pixel."""
    grid = PATTERNS[pattern]
    return grid[np.arange(h)[:, None] % 2, np.arange(w)[None, :] % 2]


def mosaic(img: np.ndarray, pattern: str = "RGGB") -> CfaImage:
    """Sample an RGB image through the Bayer pattern into a single plane."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractViolation(f"mosaic expects [H,W,3], got {img.shape}")
    h, w = img.shape[:2]
    if h % 2 or w % 2:
        raise ContractViolation(f"mosaic needs even dimensions, got {h}x{w}")
    idx = channel_index_map(pattern, h, w)
    plane = img[np.arange(h)[:, None], np.arange(w)[None, :], idx]
    return CfaImage(plane, pattern)


def rearrange_input(cfa: CfaImage) -> np.ndarray:
    """Spread the CFA plane into a [3,H,W] array with zeros at unrecorded
    color positions; summing the channels reproduces the plane exactly."""
    h, w = cfa.shape
    idx = channel_index_map(cfa.pattern, h, w)
    out = np.zeros((3, h, w))
    for c in range(3):
        out[c] = np.where(idx == c, cfa.plane, 0.0)
    return out


def add_noise(x, spec: NoiseSpec):
    """Add i.i.d. Gaussian noise with stddev sigma/255 and clamp to [0,1].

    Accepts an RGB array or a CfaImage and returns the same type.
    """
    rng = np.random.default_rng(spec.seed)
    if isinstance(x, CfaImage):
        noisy = x.plane + rng.normal(0.0, spec.sigma / 255.0, size=x.plane.shape)
        return CfaImage(np.clip(noisy, 0.0, 1.0), x.pattern)
    arr = np.asarray(x, dtype=np.float64)
    noisy = arr + rng.normal(0.0, spec.sigma / 255.0, size=arr.shape)
    return np.clip(noisy, 0.0, 1.0)


def make_noise_map(sigma: float, h: int, w: int) -> np.ndarray:
    """Constant [1,H,W] map carrying the normalized noise level sigma/255."""
    return np.full((1, h, w), sigma / 255.0)


def bilinear_demosaic(cfa: CfaImage) -> np.ndarray:
    """Average the nearest recorded neighbors of each missing color.

    Uses a 3x3 ones window normalized by the count of recorded samples it
    covers (2 or 4 taps depending on position); borders replicate-pad.
    Recorded positions keep their sampled value.
    """
    h, w = cfa.shape
    idx = channel_index_map(cfa.pattern, h, w)
    plane_p = np.pad(cfa.plane, 1, mode="edge")
    out = np.zeros((h, w, 3))
    for c in range(3):
        mask = (idx == c).astype(np.float64)
        mask_p = np.pad(mask, 1, mode="edge")
        vals_p = plane_p * mask_p
        acc = np.zeros((h, w))
        cnt = np.zeros((h, w))
        for di in range(3):
            for dj in range(3):
                if di == 1 and dj == 1:
                    continue  # center is the missing sample itself
                acc += vals_p[di:di + h, dj:dj + w]
                cnt += mask_p[di:di + h, dj:dj + w]
        interp = acc / np.where(cnt > 0, cnt, 1.0)
        out[:, :, c] = np.where(mask > 0, cfa.plane, interp)
    return out


def pixel_unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Space-to-depth: [C,H,W] -> [C*r*r, H/r, W/r], block offsets row-major."""
    c, h, w = x.shape
    if h % r or w % r:
        raise ContractViolation(f"pixel_unshuffle: {h}x{w} not divisible by r={r}")
    v = x.reshape(c, h // r, r, w // r, r)
    return np.ascontiguousarray(v.transpose(0, 2, 4, 1, 3)).reshape(c * r * r, h // r, w // r)


def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Depth-to-space inverse of pixel_unshuffle."""
    crr, h, w = x.shape
    if crr % (r * r):
        raise ContractViolation(f"pixel_shuffle: {crr} channels not divisible by r^2={r * r}")
    c = crr // (r * r)
    v = x.reshape(c, r, r, h, w)
    return np.ascontiguousarray(v.transpose(0, 3, 1, 4, 2)).reshape(c, h * r, w * r)


def _as_plane(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3 and x.shape[0] == 1:
        return x[0]
    if x.ndim != 2:
        raise ContractViolation(f"expected a [H,W] or [1,H,W] plane, got {x.shape}")
    return x


def spectrum(x: np.ndarray) -> np.ndarray:
    """log(1+|FFT|) heatmap with DC shifted to center, min-max to [0,1]."""
    plane = _as_plane(x)
    mag = np.log1p(np.abs(np.fft.fftshift(np.fft.fft2(plane))))
    lo, hi = mag.min(), mag.max()
    if hi - lo <= 0:
        return np.zeros_like(mag)
    return (mag - lo) / (hi - lo)


def spectrum_ratio(a: np.ndarray, b: np.ndarray, eps: float = 1e-8, normalized: bool = True) -> np.ndarray:
    """Centered |FFT(a)| / |FFT(b)| heatmap, clipped to [0,4].

    The denominator is floored at eps so empty reference bins stay finite;
    flooring (rather than adding eps) keeps the self-ratio exactly 1 on
    every occupied bin.  With normalized=True the clipped map is min-max
    scaled to [0,1]; the raw clipped ratio is returned otherwise.
    """
    fa = np.abs(np.fft.fftshift(np.fft.fft2(_as_plane(a))))
    fb = np.abs(np.fft.fftshift(np.fft.fft2(_as_plane(b))))
    ratio = np.clip(fa / np.maximum(fb, eps), 0.0, 4.0)
    if not normalized:
        return ratio
    lo, hi = ratio.min(), ratio.max()
    if hi - lo <= 0:
        return np.zeros_like(ratio)
    return (ratio - lo) / (hi - lo)
