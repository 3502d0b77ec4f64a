"""End-to-end reconstruction network: posed RGB and normal views to surfels.

Two identical builder stacks lift the RGB views and the normal views into
feature volumes; each volume is refined by its own residual stack; the two
refined volumes are fused by grouped cross-attention and self-attention; the
fused volume decodes to one surfel per voxel.

Ablation switches:
  no_normal_input  replaces the built normal volume with zeros
  no_cvf           bypasses attention, concatenating the refined volumes
Both leave every module constructed (so a fixed seed draws identical initial
weights with or without the switches) and change only the named computation.
"""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensor as T
from .camera import CameraPose
from .decoder import DecoderHeads, SurfelBatch, decode_volume
from .fusion import DEFAULT_GROUPS, DEFAULT_SCHEDULE, CrossVolumeFusion, VolumeRefiner
from .volume import FeatureVolume, VolumeBuilder, rows_to_grid


class ReconstructionModel(nn.Module):
    """Feed-forward multi-view reconstruction into 2D Gaussian surfels."""

    def __init__(self, rng: np.random.Generator, resolution: int = 16,
                 feat_channels: int = 32,
                 schedule: tuple[int, ...] = DEFAULT_SCHEDULE,
                 groups: int = DEFAULT_GROUPS, heads: int = 4,
                 no_normal_input: bool = False, no_cvf: bool = False):
        self.builder_rgb = VolumeBuilder(rng, resolution, 3, feat_channels)
        self.builder_nor = VolumeBuilder(rng, resolution, 3, feat_channels)
        self.refiner_rgb = VolumeRefiner(rng, feat_channels, schedule)
        self.refiner_nor = VolumeRefiner(rng, feat_channels, schedule)
        fused_c = schedule[-1]
        self.fusion = CrossVolumeFusion(rng, fused_c, groups, heads)
        self.decoder = DecoderHeads(rng, 2 * fused_c)
        self.resolution = resolution
        self.feat_channels = feat_channels
        self.no_normal_input = no_normal_input
        self.no_cvf = no_cvf

    def __call__(self, rgb_images: np.ndarray, normal_images: np.ndarray,
                 poses: list[CameraPose]) -> SurfelBatch:
        """rgb_images and normal_images are (V, 3, H, W); one pose per view."""
        v_rgb = self.builder_rgb(rgb_images, poses)
        if self.no_normal_input:
            shape = (self.feat_channels,) + (self.resolution,) * 3
            v_nor = FeatureVolume(T.zeros(shape), self.resolution)
        else:
            v_nor = self.builder_nor(normal_images, poses)
        r_rgb = self.refiner_rgb(v_rgb)
        r_nor = self.refiner_nor(v_nor)
        if self.no_cvf:
            rows = T.concat([r_rgb.rows(), r_nor.rows()], axis=-1)
            fused = FeatureVolume(rows_to_grid(rows, self.resolution), self.resolution)
        else:
            fused = self.fusion(r_rgb, r_nor)
        return decode_volume(fused, self.decoder)


def view_stacks(views: list[dict]) -> tuple[np.ndarray, np.ndarray, list[CameraPose]]:
    """Stack view dicts into the (V, 3, H, W) arrays the model consumes."""
    rgb = np.stack([v["rgb"].transpose(2, 0, 1) for v in views]).astype(np.float32)
    nor = np.stack([v["normal"].transpose(2, 0, 1) for v in views]).astype(np.float32)
    return rgb, nor, [v["pose"] for v in views]
