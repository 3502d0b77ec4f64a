"""Training losses and evaluation metrics.

The differentiable losses operate on render outputs held as tape tensors:
color and alpha L1 terms, a foreground-masked depth L1 term, and two
geometric regularizers (per-ray depth distortion and agreement between splat
normals and normals derived from the rendered depth map). Each regularizer
also has a plain-numpy twin computed from per-pixel blending records, used
as an independent reference in tests.

Metrics are numpy-only: PSNR, SSIM with an 11x11 Gaussian window, and the
symmetric Chamfer distance between point sets.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.ndimage
import scipy.spatial

from . import tensor as T
from .tensor import ShapeError, Tensor

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the total objective.

    ``rgb``/``alpha``/``perceptual`` weight the color term's parts, ``depth``
    the masked depth term, ``reg`` the summed regularizers.
    """

    depth: float = 1.0
    reg: float = 0.5
    rgb: float = 1.0
    alpha: float = 1.0
    perceptual: float = 0.5

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be nonnegative, got {value}")


@dataclass
class SupervisionBundle:
    """Rendered and ground-truth images for one supervised view.

    Rendered entries may be tape tensors (training) or arrays (evaluation).
    ``mask`` flags pixels with valid ground-truth depth; it must lie inside
    the ground-truth foreground.
    """

    rgb: Tensor | np.ndarray
    alpha: Tensor | np.ndarray
    depth: Tensor | np.ndarray
    rgb_gt: np.ndarray
    alpha_gt: np.ndarray
    depth_gt: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        hw = np.shape(self.alpha_gt)
        pairs = [
            ("rgb", self.rgb, hw + (3,)), ("alpha", self.alpha, hw),
            ("depth", self.depth, hw), ("rgb_gt", self.rgb_gt, hw + (3,)),
            ("depth_gt", self.depth_gt, hw), ("mask", self.mask, hw),
        ]
        for name, img, want in pairs:
            if tuple(np.shape(img)) != want:
                raise ShapeError(f"{name}: expected extent {want}, got {np.shape(img)}")
        if np.any(self.mask & ~(self.alpha_gt > 0)):
            raise ValueError("depth mask extends outside the ground-truth foreground")


class PerceptualLossHook:
    """Pluggable image-pair penalty; implementations must return >= 0."""

    def __call__(self, rendered_rgb, gt_rgb):
        raise NotImplementedError


class ZeroPerceptualLoss(PerceptualLossHook):
    """Inactive placeholder: returns 0 and raises its ``warned`` flag once."""

    def __init__(self):
        self.warned = False

    def __call__(self, rendered_rgb, gt_rgb):
        if not self.warned:
            self.warned = True
            warnings.warn("perceptual loss hook is inactive (returns 0)", RuntimeWarning, stacklevel=2)
        return 0.0


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def color_loss(bundle: SupervisionBundle, weights: LossWeights = LossWeights(),
               hook: PerceptualLossHook | None = None) -> Tensor:
    """Weighted L1 on RGB and alpha plus the optional perceptual term."""
    rgb_err = T.mean(T.abs_(_as_tensor(bundle.rgb) - bundle.rgb_gt))
    alpha_err = T.mean(T.abs_(_as_tensor(bundle.alpha) - bundle.alpha_gt))
    out = weights.rgb * rgb_err + weights.alpha * alpha_err
    if hook is not None:
        penalty = hook(bundle.rgb, bundle.rgb_gt)
        scalar = penalty.item() if isinstance(penalty, Tensor) else float(penalty)
        if scalar < 0:
            raise ValueError(f"perceptual hook returned {scalar}, must be nonnegative")
        if isinstance(penalty, Tensor) or scalar != 0.0:
            out = out + weights.perceptual * penalty
    return out


def depth_loss(bundle: SupervisionBundle) -> Tensor:
    """Mean absolute depth error over the validity mask; 0 if the mask is empty."""
    m = bundle.mask.astype(np.float64)
    count = m.sum()
    if count == 0:
        return T.zeros(())
    diff = T.abs_(_as_tensor(bundle.depth) - bundle.depth_gt)
    return T.sum_(diff * m.astype(diff.data.dtype)) / count


# ------------------------------------------------- geometric regularizers


def pixel_grid_dirs(intrinsics, dtype=np.float64) -> np.ndarray:
    """Camera-frame directions (H,W,3) through pixel centers, z-component 1."""
    h, w = intrinsics.height, intrinsics.width
    u = (np.arange(w, dtype=dtype) + 0.5 - intrinsics.cx) / intrinsics.fx
    v = (np.arange(h, dtype=dtype) + 0.5 - intrinsics.cy) / intrinsics.fy
    gu, gv = np.meshgrid(u, v)
    return np.stack([gu, gv, np.ones_like(gu)], axis=-1)


def _cross(a: Tensor, b: Tensor) -> Tensor:
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return T.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def depth_normals(depth: Tensor | np.ndarray, intrinsics) -> Tensor:
    """Viewer-facing camera-frame normals from a depth map.

    Backprojects pixel centers to camera-frame points, takes central
    differences along both image axes, and normalizes their cross product.
    Output covers the interior (H-2, W-2, 3); the one-pixel border has no
    centered neighborhood.
    """
    depth = _as_tensor(depth)
    h, w = depth.shape
    dirs = pixel_grid_dirs(intrinsics, dtype=depth.data.dtype)
    p = depth.reshape(h, w, 1) * dirs
    dpdu = (p[:, 2:, :] - p[:, :-2, :]) * 0.5
    dpdv = (p[2:, :, :] - p[:-2, :, :]) * 0.5
    c = _cross(dpdu[1:-1, :, :], dpdv[:, 1:-1, :])
    sq = (c * c).sum(axis=-1, keepdims=True)
    return -(c / T.sqrt(T.clamp_min(sq, 1e-24)))


def interior_mask(mask: np.ndarray) -> np.ndarray:
    """Pixels whose 4-neighborhood lies inside ``mask``, cropped to the interior."""
    return (mask[1:-1, 1:-1] & mask[:-2, 1:-1] & mask[2:, 1:-1]
            & mask[1:-1, :-2] & mask[1:-1, 2:])


def distortion_term(render) -> Tensor:
    """Mean over all rays of the per-ray pairwise depth spread."""
    return T.mean(render.distortion)


def normal_consistency_term(render, intrinsics, mask: np.ndarray) -> Tensor:
    """Mean over masked interior rays of sum_i w_i (1 - n_i . N).

    N is the depth-derived normal; the identity sum_i w_i (1 - n_i . N)
    = alpha - raw_normal . N lets the term run on the rendered maps. The
    mask is eroded so every used ray has a foreground 4-neighborhood.
    """
    m = interior_mask(mask)
    count = m.sum()
    if count == 0:
        return T.zeros(())
    n_depth = depth_normals(render.depth, intrinsics)
    alpha_in = render.alpha[1:-1, 1:-1]
    raw_in = render.normal_raw[1:-1, 1:-1, :]
    per_ray = alpha_in - (raw_in * n_depth).sum(axis=-1)
    return T.sum_(per_ray * m.astype(per_ray.data.dtype)) / count


def distortion_loss(records: dict, image_shape: tuple[int, int]) -> float:
    """Plain-numpy reference: per ray sum_{i,j} w_i w_j |z_i - z_j|, ray mean."""
    offsets = records["offsets"]
    omega, z = records["omega"], records["z"]
    n_rays = int(image_shape[0]) * int(image_shape[1])
    if len(offsets) != n_rays + 1:
        raise ShapeError(f"records cover {len(offsets) - 1} rays, image has {n_rays}")
    total = 0.0
    for r in range(n_rays):
        lo, hi = offsets[r], offsets[r + 1]
        for i in range(lo, hi):
            for j in range(lo, hi):
                total += omega[i] * omega[j] * abs(z[i] - z[j])
    return total / n_rays


def normal_consistency_loss(records: dict, depth: np.ndarray, intrinsics,
                            mask: np.ndarray) -> float:
    """Plain-numpy reference for the normal agreement regularizer."""
    h, w = depth.shape
    offsets = records["offsets"]
    if len(offsets) != h * w + 1:
        raise ShapeError(f"records cover {len(offsets) - 1} rays, image has {h * w}")
    n_depth = depth_normals(np.asarray(depth, dtype=np.float64), intrinsics).numpy()
    m = interior_mask(mask)
    count = m.sum()
    if count == 0:
        return 0.0
    omega, normal = records["omega"], records["normal"]
    total = 0.0
    for yi, xi in zip(*np.nonzero(m)):
        r = (yi + 1) * w + (xi + 1)
        lo, hi = offsets[r], offsets[r + 1]
        for i in range(lo, hi):
            total += omega[i] * (1.0 - float(normal[i] @ n_depth[yi, xi]))
    return total / count


def total_loss(bundle: SupervisionBundle, render, intrinsics,
               weights: LossWeights = LossWeights(),
               hook: PerceptualLossHook | None = None) -> tuple[Tensor, dict]:
    """Full objective: color + weighted depth + weighted regularizers.

    Returns the scalar tape tensor and a dict of float components for logging.
    """
    l_color = color_loss(bundle, weights, hook)
    l_depth = depth_loss(bundle)
    l_dist = distortion_term(render)
    l_normal = normal_consistency_term(render, intrinsics, bundle.mask)
    total = l_color + weights.depth * l_depth + weights.reg * (l_dist + l_normal)
    parts = {
        "color": l_color.item(), "depth": l_depth.item(),
        "distortion": l_dist.item(), "normal": l_normal.item(),
        "total": total.item(),
    }
    return total, parts


# ------------------------------------------------------------------ metrics


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0,1] images, capped at 99."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr extents differ: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse <= 0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _ssim_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5)."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim extents differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    win = _ssim_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    def blur(img):
        return scipy.ndimage.correlate(img, win, mode="reflect")

    values = []
    for ch in range(a.shape[-1]):
        x, y = a[..., ch], b[..., ch]
        mx, my = blur(x), blur(y)
        vx = blur(x * x) - mx * mx
        vy = blur(y * y) - my * my
        cxy = blur(x * y) - mx * my
        num = (2 * mx * my + c1) * (2 * cxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Chamfer: mean squared nearest-neighbor distance, both ways."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs nonempty point sets")
    d_ab = scipy.spatial.cKDTree(b).query(a)[0]
    d_ba = scipy.spatial.cKDTree(a).query(b)[0]
    return float(np.mean(d_ab ** 2) + np.mean(d_ba ** 2))


def metrics_record(step: int, psnr_db: float, ssim_value: float,
                   chamfer: float, losses: dict) -> dict:
    """One JSON-ready evaluation record."""
    return {
        "step": int(step),
        "psnr": float(psnr_db),
        "ssim": float(ssim_value),
        "chamfer": float(chamfer),
        "losses": {k: float(v) for k, v in losses.items()},
    }
