"""Deterministic generator of aliasing-prone line-pattern test images.

Three curve families are supported: contour (level sets of a smooth random
two-variable field), trig (dense families of phase-swept sinusoid graphs),
and nested_polygon (concentric regular n-gons with a per-ring twist).
Curves are built as 3D polylines, rotated by the spec's Euler angles,
orthographically projected, and rasterized as hard 1-pixel lines without
anti-aliasing; that hardness is exactly what provokes color moire after
mosaicking.  Everything is a pure function of the spec.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bayer import mosaic, bilinear_demosaic
from .errors import ContractViolation
from .imgio import write_image

KINDS = ("contour", "trig", "nested_polygon")
MANIFEST_VERSION = 1


@dataclass
class PatternSpec:
    kind: str
    seed: int
    size: int = 128
    line_colors: list = field(default_factory=lambda: [[1.0, 1.0, 1.0]])
    background: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    density: int = 10
    rotation: tuple = (0.0, 0.0, 0.0)  # Euler angles (x, y, z), radians

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractViolation(f"unknown pattern kind {self.kind!r}")
        if self.size < 32:
            raise ContractViolation("pattern size must be >= 32")

    def to_dict(self):
        return {
            "kind": self.kind,
            "seed": int(self.seed),
            "size": int(self.size),
            "line_colors": [[float(v) for v in c] for c in self.line_colors],
            "background": [float(v) for v in self.background],
            "density": int(self.density),
            "rotation": [float(v) for v in self.rotation],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], seed=d["seed"], size=d["size"],
                   line_colors=d["line_colors"], background=d["background"],
                   density=d["density"], rotation=tuple(d["rotation"]))


# ---------------------------------------------------------------------------
# curve families (3D polylines in normalized [-1,1] coordinates)
# ---------------------------------------------------------------------------


def _rotation_matrix(angles) -> np.ndarray:
    ax, ay, az = angles
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _random_field(rng, n: int):
    """Smooth random 2-variable function sampled on an (n+1)^2 grid."""
    xs = np.linspace(-1.0, 1.0, n + 1)
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    f = np.zeros_like(gx)
    for _ in range(4):
        amp = rng.uniform(0.4, 1.0)
        freq = rng.uniform(1.5, 4.5)
        theta = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        f += amp * np.sin(np.pi * freq * (np.cos(theta) * gx + np.sin(theta) * gy) + phase)
    return xs, f


def _marching_squares(xs, f, level):
    """Level-set segments of f at `level` by per-cell linear interpolation.

    Returns a list of ((x1,y1),(x2,y2)) pairs in normalized coordinates;
    saddle cells are split using the cell-center average.
    """
    above = f > level
    n = f.shape[0] - 1
    case = (above[:-1, :-1].astype(int)          # top-left    bit 0
            | (above[:-1, 1:].astype(int) << 1)  # top-right   bit 1
            | (above[1:, 1:].astype(int) << 2)   # bottom-right bit 2
            | (above[1:, :-1].astype(int) << 3))  # bottom-left bit 3
    cells = np.argwhere((case != 0) & (case != 15))
    segments = []

    def interp(va, vb, a, b):
        t = (level - va) / (vb - va)
        return a + t * (b - a)

    for i, j in cells:
        v = (f[i, j], f[i, j + 1], f[i + 1, j + 1], f[i + 1, j])  # tl, tr, br, bl
        x0, x1 = xs[j], xs[j + 1]
        y0, y1 = xs[i], xs[i + 1]
        # edge crossing points: top, right, bottom, left
        pts = {}
        if (v[0] > level) != (v[1] > level):
            pts["t"] = (interp(v[0], v[1], x0, x1), y0)
        if (v[1] > level) != (v[2] > level):
            pts["r"] = (x1, interp(v[1], v[2], y0, y1))
        if (v[3] > level) != (v[2] > level):
            pts["b"] = (interp(v[3], v[2], x0, x1), y1)
        if (v[0] > level) != (v[3] > level):
            pts["l"] = (x0, interp(v[0], v[3], y0, y1))
        keys = sorted(pts)
        if len(keys) == 2:
            segments.append((pts[keys[0]], pts[keys[1]]))
        elif len(keys) == 4:
            center_above = (v[0] + v[1] + v[2] + v[3]) / 4.0 > level
            tl_above = v[0] > level
            if center_above == tl_above:
                segments.append((pts["t"], pts["r"]))
                segments.append((pts["b"], pts["l"]))
            else:
                segments.append((pts["t"], pts["l"]))
                segments.append((pts["b"], pts["r"]))
    return segments


def _contour_curves(spec: PatternSpec, rng):
    xs, f = _random_field(rng, spec.size)
    lo, hi = np.quantile(f, 0.12), np.quantile(f, 0.88)
    levels = np.linspace(lo, hi, spec.density) if spec.density > 1 else [0.5 * (lo + hi)]
    z_amp = 0.5
    curves = []
    span = max(hi - lo, 1e-9)
    for level in levels:
        z = z_amp * (2.0 * (level - lo) / span - 1.0)
        for (xa, ya), (xb, yb) in _marching_squares(xs, f, level):
            curves.append(np.array([[xa, ya, z], [xb, yb, z]]))
    return curves


def _trig_curves(spec: PatternSpec, rng):
    amp = rng.uniform(0.12, 0.35)
    freq = rng.uniform(3.0, 8.0)
    phase_step = rng.uniform(0.3, 1.2)
    t = np.linspace(-1.05, 1.05, 6 * spec.size)
    curves = []
    for j in range(spec.density):
        y0 = -0.95 + 1.9 * (j + 0.5) / spec.density
        phase = j * phase_step
        y = y0 + amp * np.sin(np.pi * freq * t + phase)
        z = np.full_like(t, (j + 0.5) / spec.density - 0.5)
        curves.append(np.stack([t, y, z], axis=1))
    return curves


def polygon_family_params(seed: int):
    """Deterministic (n_sides, twist_step) for the nested_polygon family."""
    n_sides = 3 + (seed // 8) % 6
    twist_step = (seed % 8) * np.pi / (8.0 * n_sides)
    return n_sides, twist_step


def polygon_rings(n_sides: int, twist_step: float, density: int, r_max: float = 0.92):
    """Closed ring polylines for `density` concentric regular n-gons.

    Ring j has circumradius r_max*(j+1)/density and is twisted by
    j*twist_step; the base vertex offset pi/n makes zero-twist squares
    axis-aligned.
    """
    rings = []
    for j in range(density):
        radius = r_max * (j + 1) / density
        offset = np.pi / n_sides + j * twist_step
        angles = offset + 2.0 * np.pi * np.arange(n_sides + 1) / n_sides
        z = ((j + 0.5) / density - 0.5) * 0.6
        rings.append(np.stack(
            [radius * np.cos(angles), radius * np.sin(angles), np.full_like(angles, z)],
            axis=1))
    return rings


def _polygon_curves(spec: PatternSpec, rng):
    n_sides, twist_step = polygon_family_params(spec.seed)
    return polygon_rings(n_sides, twist_step, spec.density)


def build_curves(spec: PatternSpec):
    """3D polylines for the spec's family, before rotation and projection."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "contour":
        return _contour_curves(spec, rng)
    if spec.kind == "trig":
        return _trig_curves(spec, rng)
    return _polygon_curves(spec, rng)


# ---------------------------------------------------------------------------
# projection and rasterization
# ---------------------------------------------------------------------------


def project_curves(curves, rotation, size: int):
    """Rotate, orthographically project (drop z), and map to pixel coords."""
    rot = _rotation_matrix(rotation)
    out = []
    for pts in curves:
        p = pts @ rot.T
        px = (p[:, 0] + 1.0) * 0.5 * (size - 1)
        py = (p[:, 1] + 1.0) * 0.5 * (size - 1)
        out.append(np.stack([px, py], axis=1))
    return out


def rasterize_polyline(canvas: np.ndarray, pts: np.ndarray, color) -> None:
    """Draw a 1-pixel polyline by parametric stepping, no anti-aliasing.

    Sample spacing along each segment is at most one pixel and coordinates
    round half-up, so axis-aligned and 45-degree segments land on exact
    pixel runs.
    """
    size_y, size_x = canvas.shape[:2]
    for a, b in zip(pts[:-1], pts[1:]):
        steps = int(np.ceil(max(abs(b[0] - a[0]), abs(b[1] - a[1]))))
        steps = max(steps, 1)
        ts = np.arange(steps + 1) / steps
        xs = np.floor(a[0] + ts * (b[0] - a[0]) + 0.5).astype(int)
        ys = np.floor(a[1] + ts * (b[1] - a[1]) + 0.5).astype(int)
        ok = (xs >= 0) & (xs < size_x) & (ys >= 0) & (ys < size_y)
        canvas[ys[ok], xs[ok]] = color


def gen_pattern(spec: PatternSpec) -> np.ndarray:
    """Render the spec into an [size,size,3] image in [0,1]."""
    canvas = np.tile(np.asarray(spec.background, dtype=np.float64), (spec.size, spec.size, 1))
    curves = project_curves(build_curves(spec), spec.rotation, spec.size)
    palette = [np.asarray(c, dtype=np.float64) for c in spec.line_colors]
    for idx, pts in enumerate(curves):
        rasterize_polyline(canvas, pts, palette[idx % len(palette)])
    return np.clip(canvas, 0.0, 1.0)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------


def _pick_colors(rng):
    background = rng.uniform(0.0, 1.0, size=3)
    count = 1 + int(rng.integers(3))
    colors = []
    for _ in range(count):
        c = rng.uniform(0.0, 1.0, size=3)
        while np.abs(c - background).max() < 0.35:
            c = rng.uniform(0.0, 1.0, size=3)
        colors.append(c.tolist())
    return colors, background.tolist()


def _density_for(kind: str, size: int, rng) -> int:
    base = {"contour": (6, 11), "trig": (8, 14), "nested_polygon": (14, 24)}[kind]
    lo = max(2, round(base[0] * size / 128))
    hi = max(lo + 1, round(base[1] * size / 128))
    return int(rng.integers(lo, hi + 1))


def gen_dataset(n: int, seed: int, out_dir, size: int = 128) -> dict:
    """Emit n images cycling through the three families plus a manifest.

    Regenerating with the same arguments (or from the manifest) reproduces
    byte-identical files.
    """
    if n < 1:
        raise ContractViolation("dataset size must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    master = np.random.default_rng(seed)
    entries = []
    for i in range(n):
        kind = KINDS[i % 3]
        sub_seed = int(master.integers(2 ** 31))
        colors, background = _pick_colors(master)
        density = _density_for(kind, size, master)
        rotation = tuple(master.uniform(-0.45, 0.45, size=3).tolist())
        spec = PatternSpec(kind=kind, seed=sub_seed, size=size,
                           line_colors=colors, background=background,
                           density=density, rotation=rotation)
        filename = f"img_{i:02d}.png"
        write_image(out_dir / filename, gen_pattern(spec))
        entries.append({"filename": filename, **spec.to_dict()})
    manifest = {"version": MANIFEST_VERSION, "seed": int(seed), "count": n, "images": entries}
    with open(out_dir / "manifest.json", "w") as fp:
        json.dump(manifest, fp, indent=2)
    return manifest


def gen_from_manifest(manifest: dict, out_dir) -> None:
    """Re-render every image described by a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for entry in manifest["images"]:
        spec = PatternSpec.from_dict(entry)
        write_image(out_dir / entry["filename"], gen_pattern(spec))


# ---------------------------------------------------------------------------
# hardness diagnostics
# ---------------------------------------------------------------------------


# Hard 1-px lines leak broadband energy, so their spectral floor sits around
# 1e-5..1e-4 of peak at 128x128; the silent-bin tolerance must sit above that
# floor for the diagnostic to see anything.  3e-3 keeps the line-vs-smooth
# ordering strict on every generated image while smooth gradients still score
# near zero.
SILENT_BIN_TOL = 3e-3


def false_frequency_energy(recon_plane: np.ndarray, ref_plane: np.ndarray,
                           silent_tol: float = SILENT_BIN_TOL) -> float:
    """Energy a reconstruction puts into bins where the reference spectrum
    is near zero (< silent_tol of its peak), relative to the total
    reference energy."""
    fr = np.abs(np.fft.fft2(np.asarray(recon_plane, dtype=np.float64)))
    fg = np.abs(np.fft.fft2(np.asarray(ref_plane, dtype=np.float64)))
    silent = fg < silent_tol * fg.max()
    total = (fg ** 2).sum()
    if total <= 0:
        return 0.0
    return float((fr[silent] ** 2).sum() / total)


def moire_stress(img: np.ndarray) -> float:
    """Mosaic, bilinear-demosaic, and measure green-channel false-frequency
    energy against the original; larger means stronger aliasing."""
    demosaicked = bilinear_demosaic(mosaic(img))
    return false_frequency_energy(demosaicked[:, :, 1], img[:, :, 1])


def gaussian_blur(img: np.ndarray, sigma: float = 2.0) -> np.ndarray:
    """Separable Gaussian blur with reflect padding (smooth control images)."""
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1)
    kernel = np.exp(-(xs ** 2) / (2.0 * sigma ** 2))
    kernel /= kernel.sum()
    out = np.asarray(img, dtype=np.float64)
    for axis in (0, 1):
        padded = np.pad(out, [(radius, radius) if a == axis else (0, 0)
                              for a in range(out.ndim)], mode="reflect")
        out = np.apply_along_axis(lambda m: np.convolve(m, kernel, mode="valid"), axis, padded)
    return np.clip(out, 0.0, 1.0)


def smooth_control(img: np.ndarray, sigma: float = 2.0) -> np.ndarray:
    """Blurred twin of a line image, used as the easy-case baseline."""
    return gaussian_blur(img, sigma)
