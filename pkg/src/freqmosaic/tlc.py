"""Test-time local conversion: overlapping-tile inference with seam averaging.

Fourier-domain processing is sensitive to the input size it was trained at,
so large images are demosaicked as overlapping patches of the training size
and recombined by averaging every pixel over the tiles that cover it.
Anchors are restricted to even coordinates so every tile sees the same
Bayer phase as the full image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bayer import CfaImage
from .errors import ContractViolation
from .model import demosaic_image


@dataclass
class TilePlan:
    patch: int
    stride: int
    anchors: list  # (row, col) tile origins covering the image


def plan_tiles(h: int, w: int, patch: int, stride: int) -> TilePlan:
    """Anchors at 0, t, 2t, ... with the last one clamped to the border so
    the final tile ends exactly at the image edge; every pixel is covered."""
    if patch > h or patch > w:
        raise ContractViolation(f"patch {patch} exceeds image {h}x{w}")
    if not (1 <= stride <= patch):
        raise ContractViolation(f"stride {stride} not in [1, {patch}]")
    if patch % 2:
        raise ContractViolation("patch size must be even")

    def axis_anchors(extent):
        stops = list(range(0, extent - patch, stride))
        stops.append(extent - patch)
        return stops

    anchors = [(r, c) for r in axis_anchors(h) for c in axis_anchors(w)]
    return TilePlan(patch=patch, stride=stride, anchors=anchors)


def tiled_apply(tile_fn, cfa: CfaImage, patch: int, stride: int) -> np.ndarray:
    """Run tile_fn(CfaImage tile) -> [p,p,3] on every tile and average
    overlaps.  Tiles are processed in anchor order, so accumulation is
    deterministic."""
    if stride % 2:
        raise ContractViolation(f"stride {stride} is odd and would break the Bayer phase")
    h, w = cfa.shape
    plan = plan_tiles(h, w, patch, stride)
    acc = np.zeros((h, w, 3))
    cnt = np.zeros((h, w, 1))
    for r, c in plan.anchors:
        tile = CfaImage(cfa.plane[r:r + patch, c:c + patch].copy(), cfa.pattern)
        out = tile_fn(tile)
        acc[r:r + patch, c:c + patch] += out
        cnt[r:r + patch, c:c + patch] += 1.0
    return acc / cnt


def demosaic_tiled(params, config, cfa: CfaImage, sigma: float,
                   patch: int | None = None, stride: int | None = None) -> np.ndarray:
    """Tiled model inference; defaults to the training patch size with
    half-patch overlap (stride = patch/2)."""
    if patch is None:
        patch = config.train_height
    if stride is None:
        stride = patch // 2
    return tiled_apply(lambda tile: demosaic_image(tile, sigma, params, config),
                       cfa, patch, stride)
