"""Decoding voxel features into 2D Gaussian surfels: a shared MLP trunk with
five heads (center offset, scale, rotation, opacity, SH color), one surfel per
voxel, activation-bounded so centers stay near their voxel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .tensor import ShapeError, Tensor
from .volume import FeatureVolume, voxel_centers, voxel_edge

_QUAT_EPS = 1e-8

# Head bias init shapes the early optimization race on sparse scenes. With
# default softplus(0) scales every splat's footprint spans ~3.5 voxels, so
# each ray blends ~16 splats and every background pixel pushes the whole
# stack down; the shared opacity head then drives all voxels into the
# sigmoid tail together and the model freezes blank. Starting splats at
# roughly one voxel footprint (softplus(-1.5)*1.5 ~ 0.3 edge) keeps the
# pixel-to-voxel correspondence nearly local, and a mid-range opacity
# (sigmoid(-1.0) ~ 0.27) keeps the sigmoid responsive while foreground and
# background votes are still fighting over the shared head.
OPACITY_BIAS_INIT = -1.0
SCALE_BIAS_INIT = -1.5


@dataclass(frozen=True)
class Gaussian2D:
    """One surfel, as plain arrays: world center, two tangent extents, unit
    quaternion (w, x, y, z), opacity in [0,1], SH coefficients (K, 3)."""

    center: np.ndarray
    scale: np.ndarray
    quat: np.ndarray
    opacity: float
    sh: np.ndarray


@dataclass
class SurfelBatch:
    """All surfels of a volume as stacked tensors, voxel order (x-fastest)."""

    centers: Tensor  # (P, 3)
    scales: Tensor  # (P, 2) positive
    quats: Tensor  # (P, 4) unit
    opacities: Tensor  # (P,) in [0,1]
    sh: Tensor  # (P, 3*(L+1)^2), coefficient-major [c0_rgb, c1_rgb, ...]

    def __len__(self) -> int:
        return self.centers.shape[0]

    def __getitem__(self, i: int) -> Gaussian2D:
        k = self.sh.shape[1] // 3
        return Gaussian2D(self.centers.data[i].copy(), self.scales.data[i].copy(),
                          self.quats.data[i].copy(), float(self.opacities.data[i]),
                          self.sh.data[i].reshape(k, 3).copy())

    def ply_rows(self) -> np.ndarray:
        """(P, 10+K) float32 rows ordered x,y,z, scale_u, scale_v, quat_wxyz,
        opacity, sh_0.."""
        return np.concatenate(
            [self.centers.data, self.scales.data, self.quats.data,
             self.opacities.data[:, None], self.sh.data], axis=1
        ).astype(np.float32)


class DecoderHeads(nn.Module):
    """Shared two-layer SiLU trunk with one linear head per attribute.

    All-zero raw head outputs decode to the rest pose: center at the voxel,
    opacity 0.5, identity rotation (the quaternion head carries a (1,0,0,0)
    bias), scale softplus(0)*s_max.
    """

    def __init__(self, rng: np.random.Generator, c_in: int, hidden: int = 64,
                 sh_degree: int = 1, offset_activation: str = "tanh"):
        if offset_activation not in ("tanh", "sigmoid"):
            raise ValueError(f"unknown offset activation {offset_activation!r}")
        self.fc1 = nn.Linear(rng, c_in, hidden)
        self.fc2 = nn.Linear(rng, hidden, hidden)
        self.head_offset = nn.Linear(rng, hidden, 3)
        self.head_scale = nn.Linear(rng, hidden, 2)
        self.head_scale.b.data[:] = SCALE_BIAS_INIT
        self.head_rot = nn.Linear(rng, hidden, 4)
        self.head_opacity = nn.Linear(rng, hidden, 1)
        self.head_opacity.b.data[:] = OPACITY_BIAS_INIT
        self.head_sh = nn.Linear(rng, hidden, 3 * (sh_degree + 1) ** 2)
        self.c_in = c_in
        self.sh_degree = sh_degree
        self.offset_activation = offset_activation

    def trunk(self, rows: Tensor) -> Tensor:
        if rows.shape[-1] != self.c_in:
            raise ShapeError(f"decoder expects {self.c_in} features, got {rows.shape[-1]}")
        return T.silu(self.fc2(T.silu(self.fc1(rows))))


def _unit_offset(raw: Tensor, kind: str) -> Tensor:
    if kind == "tanh":
        return T.tanh(raw)
    return T.sigmoid(raw) * 2.0 - 1.0


def decode_rows(rows: Tensor, centers: np.ndarray, heads: DecoderHeads,
                edge: float) -> SurfelBatch:
    """Decode (P, C) feature rows owned by voxel ``centers`` with voxel edge
    length ``edge``; movement range r = edge/2, max scale 1.5*edge."""
    h = heads.trunk(rows)
    move = 0.5 * edge
    s_max = 1.5 * edge

    offset = _unit_offset(heads.head_offset(h), heads.offset_activation)
    pos = Tensor(centers.astype(np.float32)) + offset * move
    scales = T.softplus(heads.head_scale(h)) * s_max
    raw_q = heads.head_rot(h) + Tensor(np.array([1.0, 0.0, 0.0, 0.0], dtype=np.float32))
    norm = T.sqrt(T.clamp_min((raw_q * raw_q).sum(axis=-1, keepdims=True), _QUAT_EPS ** 2))
    quats = raw_q / norm
    opacity = T.sigmoid(heads.head_opacity(h)).reshape(h.shape[0])
    sh = heads.head_sh(h)
    return SurfelBatch(pos, scales, quats, opacity, sh)


def decode_volume(vol: FeatureVolume, heads: DecoderHeads) -> SurfelBatch:
    """One surfel per voxel in linear voxel order."""
    return decode_rows(vol.rows(), voxel_centers(vol.resolution), heads,
                       voxel_edge(vol.resolution))


def decode_voxel(feature: Tensor, center: np.ndarray, heads: DecoderHeads,
                 edge: float) -> Gaussian2D:
    """Single-voxel decode; equals the corresponding row of a batch decode."""
    batch = decode_rows(feature.reshape(1, feature.shape[-1]),
                        np.asarray(center, dtype=np.float64).reshape(1, 3), heads, edge)
    return batch[0]
