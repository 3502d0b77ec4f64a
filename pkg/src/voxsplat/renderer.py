"""Differentiable surfel rendering.

Each surfel is a 2D Gaussian disc: its quaternion gives unit tangents t_u, t_v
and normal n = t_u x t_v, its two scales stretch the tangents. A pixel's ray
hits the disc plane at t = ((c - o).n)/(d.n); the hit expressed in tangent
units gives the Gaussian weight exp(-(u^2+v^2)/2), cut off at 1/255. Hits are
composited front to back in intersection-depth order with per-hit alpha
min(opacity * weight, 0.9999), stopping once transmittance falls below 1e-4.

The kernel produces one packed (H, W, 9) map — foreground color, alpha,
depth sum, accumulated viewer-facing camera-frame normal, and the per-ray
depth distortion — as a single tape node; color/depth/normal finishing and
the background blend happen in tape ops on top.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import camera as cam
from . import kernels
from . import tensor as T
from .decoder import SurfelBatch
from .kernels.render_common import DEPTH_EPS
from .tensor import Tensor


def quat_to_frame(q: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Unit quaternion rows (P,4) wxyz -> rotation columns (t_u, t_v, n)."""
    w, x, y, z = (q[:, i] for i in range(4))
    two = 2.0
    tu = T.stack([1.0 - two * (y * y + z * z), two * (x * y + w * z), two * (x * z - w * y)], axis=-1)
    tv = T.stack([two * (x * y - w * z), 1.0 - two * (x * x + z * z), two * (y * z + w * x)], axis=-1)
    n = T.stack([two * (x * z + w * y), two * (y * z - w * x), 1.0 - two * (x * x + y * y)], axis=-1)
    return tu, tv, n


@dataclass
class RenderOutput:
    """Rendered maps as tape tensors plus the inputs needed for records."""

    color: Tensor  # (H,W,3) composited onto the background
    alpha: Tensor  # (H,W)
    depth: Tensor  # (H,W) alpha-normalized composite depth
    normal: Tensor  # (H,W,3) unit camera-frame normals (zero where empty)
    normal_raw: Tensor  # (H,W,3) pre-normalization accumulated normals
    distortion: Tensor  # (H,W) per-ray pairwise depth spread
    _kernel_inputs: dict

    def records(self):
        """Non-differentiable per-pixel blending records (oracle surface)."""
        return kernels.render_records(self._kernel_inputs)

    def depth_with_sentinel(self, far: float) -> np.ndarray:
        """Depth image for export: empty pixels report the far bound."""
        d = self.depth.numpy()
        return np.where(self.alpha.numpy() > 0.5, d, far).astype(np.float32)


def render(surfels: SurfelBatch, pose: cam.CameraPose,
           background=(0.0, 0.0, 0.0), backend: str | None = None) -> RenderOutput:
    """Render a surfel batch from ``pose``; differentiable w.r.t. every
    surfel attribute. Surfel input order does not affect the image."""
    tu, tv, nrm = quat_to_frame(surfels.quats)
    dirs = cam.ray_grid(pose, dtype=surfels.centers.data.dtype)

    parents = (surfels.centers, tu, tv, nrm, surfels.scales, surfels.opacities, surfels.sh)
    inputs = {
        "centers": surfels.centers.data, "tu": tu.data, "tv": tv.data,
        "nrm": nrm.data, "scales": surfels.scales.data,
        "alpha": surfels.opacities.data, "sh": surfels.sh.data,
        "origin": pose.center.astype(dirs.dtype), "dirs": dirs,
        "fwd": pose.rotation[:, 2].astype(dirs.dtype),
        "rot": pose.rotation.astype(dirs.dtype),
        "fx": pose.intrinsics.fx, "fy": pose.intrinsics.fy,
        "cx": pose.intrinsics.cx, "cy": pose.intrinsics.cy,
    }
    packed_data = kernels.render_forward(inputs, backend=backend)

    def backward(g):
        grads = kernels.render_backward(inputs, np.ascontiguousarray(g), backend=backend)
        for parent, key in zip(parents, ("centers", "tu", "tv", "nrm", "scales", "alpha", "sh")):
            T._accumulate(parent, grads[key])

    packed = T._make(packed_data, parents, backward, "render")

    h, w, _ = packed.shape
    alpha = packed[:, :, 3]
    bg = Tensor(np.asarray(background, dtype=packed_data.dtype))
    color = packed[:, :, 0:3] + (1.0 - alpha).reshape(h, w, 1) * bg
    depth = packed[:, :, 4] / T.clamp_min(alpha, DEPTH_EPS)
    normal_raw = packed[:, :, 5:8]
    norm = T.sqrt(T.clamp_min((normal_raw * normal_raw).sum(axis=-1, keepdims=True), 1e-24))
    normal = normal_raw / norm
    return RenderOutput(color, alpha, depth, normal, normal_raw,
                        packed[:, :, 8], inputs)
