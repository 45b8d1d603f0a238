"""Image file I/O: 8-bit PNG and binary PPM/PGM, quantized by round(v*255).

Arrays are float64 in [0,1]; RGB images are H x W x 3, grayscale planes are
H x W.  The file format is chosen from the extension (.png, .ppm for P6
color, .pgm for P5 gray).
"""

from __future__ import annotations

import numpy as np
from PIL import Image as PILImage


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)


def write_image(path, values: np.ndarray) -> None:
    """Write an RGB [H,W,3] or grayscale [H,W] float image in [0,1]."""
    arr = to_uint8(np.asarray(values, dtype=np.float64))
    if arr.ndim == 2:
        img = PILImage.fromarray(arr, mode="L")
    elif arr.ndim == 3 and arr.shape[2] == 3:
        img = PILImage.fromarray(arr, mode="RGB")
    else:
        raise ValueError(f"unsupported image shape {arr.shape}")
    img.save(str(path))


def read_image(path) -> np.ndarray:
    """Read an image as float64 in [0,1]; RGB [H,W,3] or grayscale [H,W]."""
    with PILImage.open(str(path)) as img:
        if img.mode in ("L", "I;16", "I"):
            arr = np.asarray(img.convert("L"), dtype=np.float64)
            return arr / 255.0
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
        return arr / 255.0


def read_rgb(path) -> np.ndarray:
    """Read as RGB [H,W,3] regardless of the stored mode."""
    arr = read_image(path)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return arr


def read_gray(path) -> np.ndarray:
    """Read as a single [H,W] plane (luma conversion if the file is RGB)."""
    with PILImage.open(str(path)) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64)
    return arr / 255.0
