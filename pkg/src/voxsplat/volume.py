"""Lifting posed images into voxel feature volumes.

Each view is encoded by a strided conv stack, its feature pixels are modulated
by the view's per-pixel ray embedding, and voxel centers gather bilinear
samples from every view they project into. The per-voxel mean over visible
views makes the volume invariant to view order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import camera as cam
from . import nn
from . import tensor as T
from .tensor import Tensor

VOLUME_LO = -1.0
VOLUME_HI = 1.0


def voxel_centers(resolution: int) -> np.ndarray:
    """(W^3, 3) centers on the working cube, linear index ix + W*(iy + W*iz)."""
    edge = (VOLUME_HI - VOLUME_LO) / resolution
    coords = VOLUME_LO + (np.arange(resolution) + 0.5) * edge
    zz, yy, xx = np.meshgrid(coords, coords, coords, indexing="ij")
    return np.stack([xx.reshape(-1), yy.reshape(-1), zz.reshape(-1)], axis=1)


def voxel_edge(resolution: int) -> float:
    return (VOLUME_HI - VOLUME_LO) / resolution


@dataclass
class FeatureVolume:
    """(C, W, W, W) feature grid over the working cube, axes (c, z, y, x)."""

    data: Tensor
    resolution: int

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    def rows(self) -> Tensor:
        """(W^3, C) view matching the voxel linear index order."""
        return self.data.reshape(self.channels, self.resolution ** 3).T


def rows_to_grid(rows: Tensor, resolution: int) -> Tensor:
    """(W^3, C) voxel rows back to a (C, W, W, W) grid."""
    return rows.T.reshape(rows.shape[1], resolution, resolution, resolution)


class ImageEncoder(nn.Module):
    """Three-layer conv feature extractor, total stride 4."""

    stride = 4

    def __init__(self, rng: np.random.Generator, c_in: int = 3, c_out: int = 32):
        self.conv1 = nn.Conv2d(rng, c_in, 16, stride=2)
        self.conv2 = nn.Conv2d(rng, 16, 32, stride=2)
        self.conv3 = nn.Conv2d(rng, 32, c_out, stride=1)
        self.c_out = c_out

    def __call__(self, x: Tensor) -> Tensor:
        h = T.leaky_relu(self.conv1(x))
        h = T.leaky_relu(self.conv2(h))
        return T.leaky_relu(self.conv3(h))


class RayModulation(nn.Module):
    """Feature conditioning on the pixel's ray: LN(c) scaled and shifted by a
    linear map of the ray's 6-vector. Zero init makes it exactly LN at start."""

    def __init__(self, rng: np.random.Generator, channels: int):
        self.proj = nn.Linear(rng, 6, 2 * channels, zero_init=True)
        self.channels = channels

    def __call__(self, rows: Tensor, ray_vec: Tensor) -> Tensor:
        mod = self.proj(ray_vec)
        gamma = mod[:, : self.channels]
        beta = mod[:, self.channels:]
        return (gamma + 1.0) * T.layer_norm(rows, axis=-1) + beta


def _bilinear_gather(rows: Tensor, xf: np.ndarray, yf: np.ndarray,
                     valid: np.ndarray, height: int, width: int) -> Tensor:
    """Sample (P, C) values from per-pixel rows at continuous feature coords;
    invalid points contribute zeros."""
    x0 = np.floor(xf).astype(np.int64)
    y0 = np.floor(yf).astype(np.int64)
    wx = (xf - x0).astype(np.float32)
    wy = (yf - y0).astype(np.float32)
    x0c = np.clip(x0, 0, width - 1)
    y0c = np.clip(y0, 0, height - 1)
    x1c = np.clip(x0 + 1, 0, width - 1)
    y1c = np.clip(y0 + 1, 0, height - 1)
    m = valid.astype(np.float32)[:, None]
    out = None
    for yi, wy_ in ((y0c, 1.0 - wy), (y1c, wy)):
        for xi, wx_ in ((x0c, 1.0 - wx), (x1c, wx)):
            w = Tensor((wy_ * wx_)[:, None] * m)
            term = T.take_rows(rows, yi * width + xi) * w
            out = term if out is None else out + term
    return out


class VolumeBuilder(nn.Module):
    """Encoder plus ray modulation plus the multi-view voxel lift."""

    def __init__(self, rng: np.random.Generator, resolution: int = 16,
                 c_in: int = 3, channels: int = 32):
        self.encoder = ImageEncoder(rng, c_in, channels)
        self.modulation = RayModulation(rng, channels)
        self.resolution = resolution
        self.channels = channels

    def __call__(self, images: np.ndarray, poses: list[cam.CameraPose]) -> FeatureVolume:
        """images (V, C, H, W) float in [0,1] or [-1,1]; one pose per view."""
        if images.ndim != 4 or images.shape[0] != len(poses):
            raise ValueError(f"need one pose per image, got {images.shape} and {len(poses)}")
        stride = self.encoder.stride
        feats = self.encoder(Tensor(np.ascontiguousarray(images, dtype=np.float32)))
        _, c_f, hf, wf = feats.shape
        centers = voxel_centers(self.resolution)
        n_vox = centers.shape[0]

        total: Tensor | None = None
        count = np.zeros((n_vox, 1), dtype=np.float32)
        for v, pose in enumerate(poses):
            rows = feats[v].reshape(c_f, hf * wf).T
            ray_vec = Tensor(cam.plucker_grid(pose, stride=stride).reshape(-1, 6).astype(np.float32))
            rows = self.modulation(rows, ray_vec)

            u, pv, z = cam.project_points(pose, centers)
            xf = u / stride - 0.5
            yf = pv / stride - 0.5
            valid = (z > 0) & (xf >= 0) & (xf <= wf - 1) & (yf >= 0) & (yf <= hf - 1)
            xf = np.where(valid, xf, 0.0)
            yf = np.where(valid, yf, 0.0)
            sampled = _bilinear_gather(rows, xf, yf, valid, hf, wf)
            total = sampled if total is None else total + sampled
            count += valid.astype(np.float32)[:, None]

        mean_rows = total * Tensor(1.0 / np.maximum(count, 1.0))
        return FeatureVolume(rows_to_grid(mean_rows, self.resolution), self.resolution)
