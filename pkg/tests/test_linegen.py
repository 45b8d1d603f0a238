"""Pattern generator: determinism, rasterization oracle, hardness ordering."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from freqmosaic import bayer, linegen, metrics
from freqmosaic.errors import ContractViolation
from freqmosaic.imgio import read_image


def dir_digest(path):
    h = hashlib.sha256()
    for p in sorted(Path(path).iterdir()):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def scanline_square_pixels(rings, size):
    """Independent scan-line walk over axis-aligned square rings.

    For each ring (4 corners at (+-a, +-a) plus closing vertex) the expected
    pixel set is the square border: for every row between the mapped corner
    rows, mark the two edge columns; for the top and bottom rows, mark the
    full run.  Uses the same normalized-to-pixel mapping and half-up
    rounding as the rasterizer, but derives pixels analytically instead of
    stepping along segments.
    """
    expected = set()
    for ring in rings:
        xs = ring[:, 0]
        ys = ring[:, 1]
        to_px = lambda v: int(np.floor((v + 1.0) * 0.5 * (size - 1) + 0.5))
        left, right = to_px(xs.min()), to_px(xs.max())
        top, bottom = to_px(ys.min()), to_px(ys.max())
        for col in range(left, right + 1):
            expected.add((top, col))
            expected.add((bottom, col))
        for row in range(top, bottom + 1):
            expected.add((row, left))
            expected.add((row, right))
    return expected


class TestGenPattern:
    def test_density_zero_pure_background(self):
        spec = linegen.PatternSpec(kind="nested_polygon", seed=8, size=32,
                                   background=[0.2, 0.5, 0.7], density=0)
        img = linegen.gen_pattern(spec)
        np.testing.assert_allclose(img, np.tile([0.2, 0.5, 0.7], (32, 32, 1)))

    def test_same_spec_byte_identical(self, tmp_path):
        spec = linegen.PatternSpec(kind="trig", seed=5, size=64, density=9,
                                   rotation=(0.1, -0.2, 0.3))
        from freqmosaic.imgio import write_image
        write_image(tmp_path / "a.png", linegen.gen_pattern(spec))
        write_image(tmp_path / "b.png", linegen.gen_pattern(spec))
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def test_values_in_unit_range(self):
        for kind in linegen.KINDS:
            spec = linegen.PatternSpec(kind=kind, seed=3, size=64, density=6,
                                       line_colors=[[1.0, 0.0, 0.5]],
                                       rotation=(0.2, 0.1, -0.3))
            img = linegen.gen_pattern(spec)
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_nested_squares_match_scanline_oracle(self):
        """Zero view rotation, zero ring twist, four sides: the rasterized
        pixel set must equal the analytically derived square borders."""
        seed = next(s for s in range(200)
                    if linegen.polygon_family_params(s) == (4, 0.0))
        spec = linegen.PatternSpec(kind="nested_polygon", seed=seed, size=128,
                                   line_colors=[[1.0, 1.0, 1.0]],
                                   background=[0.0, 0.0, 0.0],
                                   density=20, rotation=(0.0, 0.0, 0.0))
        img = linegen.gen_pattern(spec)
        got = {(r, c) for r, c in np.argwhere(img[:, :, 0] > 0.5)}

        rings = linegen.polygon_rings(4, 0.0, 20)
        want = scanline_square_pixels(rings, 128)
        assert got == want


class TestGenDataset:
    def test_reproducible_directory_hash(self, tmp_path):
        linegen.gen_dataset(6, 31, tmp_path / "a", size=64)
        linegen.gen_dataset(6, 31, tmp_path / "b", size=64)
        assert dir_digest(tmp_path / "a") == dir_digest(tmp_path / "b")

    def test_n3_cycles_kinds(self, tmp_path):
        manifest = linegen.gen_dataset(3, 0, tmp_path / "d", size=32)
        kinds = [e["kind"] for e in manifest["images"]]
        assert kinds == ["contour", "trig", "nested_polygon"]

    def test_manifest_regenerates_identical_bytes(self, tmp_path):
        linegen.gen_dataset(4, 9, tmp_path / "orig", size=64)
        with open(tmp_path / "orig" / "manifest.json") as fp:
            manifest = json.load(fp)
        linegen.gen_from_manifest(manifest, tmp_path / "regen")
        for entry in manifest["images"]:
            a = (tmp_path / "orig" / entry["filename"]).read_bytes()
            b = (tmp_path / "regen" / entry["filename"]).read_bytes()
            assert a == b

    def test_n_zero_rejected(self, tmp_path):
        with pytest.raises(ContractViolation):
            linegen.gen_dataset(0, 0, tmp_path / "x")

    def test_bilinear_demosaic_at_least_3db_harder_than_smooth(self, tmp_path):
        linegen.gen_dataset(9, 7, tmp_path / "set", size=64)
        line_psnr, smooth_psnr = [], []
        for p in sorted((tmp_path / "set").glob("*.png")):
            img = read_image(p)
            control = linegen.smooth_control(img)
            line_psnr.append(metrics.psnr(bayer.bilinear_demosaic(bayer.mosaic(img)), img))
            smooth_psnr.append(metrics.psnr(bayer.bilinear_demosaic(bayer.mosaic(control)), control))
        assert np.mean(smooth_psnr) - np.mean(line_psnr) >= 3.0


class TestMoireStress:
    def test_constant_zero(self):
        assert linegen.moire_stress(np.full((32, 32, 3), 0.5)) == 0.0

    def test_smooth_gradient_near_zero(self):
        gx, gy = np.meshgrid(np.linspace(0, 1, 64), np.linspace(0, 1, 64))
        img = np.stack([0.8 * gx, 0.2 + 0.5 * gy, 0.3 + 0.3 * gx * gy], axis=2)
        assert linegen.moire_stress(img) < 0.01

    def test_line_grid_exceeds_gradient(self):
        gx, gy = np.meshgrid(np.linspace(0, 1, 64), np.linspace(0, 1, 64))
        grad = np.stack([0.8 * gx, 0.2 + 0.5 * gy, 0.3 + 0.3 * gx * gy], axis=2)
        grid = np.zeros((64, 64, 3))
        grid[::4, :] = [1.0, 0.2, 0.1]
        grid[:, ::4] = [0.1, 0.9, 1.0]
        assert linegen.moire_stress(grid) > linegen.moire_stress(grad)

    def test_hardness_ordering_on_generated_set(self, tmp_path):
        linegen.gen_dataset(9, 7, tmp_path / "set", size=128)
        line_scores, smooth_scores = [], []
        for p in sorted((tmp_path / "set").glob("*.png")):
            img = read_image(p)
            line_scores.append(linegen.moire_stress(img))
            smooth_scores.append(linegen.moire_stress(linegen.smooth_control(img)))
        assert np.mean(line_scores) > np.mean(smooth_scores)
        for ls, ss in zip(line_scores, smooth_scores):
            assert ls > ss
