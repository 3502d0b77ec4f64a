"""Camera poses, per-pixel rays, Plücker embeddings, and projection.

Conventions (fixed once, shared by the renderer and the data generator):
  * world frame is right-handed with +z up;
  * camera frame is x-right, y-down, z-forward, so points in front of the
    camera have camera-frame z > 0 and depth is that z value;
  * pixel (u, v) samples the pixel center (u + 0.5, v + 0.5).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0.0 <= self.cx <= self.width and 0.0 <= self.cy <= self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}")


@dataclass(frozen=True)
class CameraPose:
    """World-from-camera rotation, camera center in world units, pinhole intrinsics."""

    rotation: np.ndarray  # (3,3), columns are the camera axes in world frame
    translation: np.ndarray  # (3,) camera center
    intrinsics: Intrinsics

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"rotation must be (3,3) and translation (3,), got {R.shape}, {t.shape}")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-5:
            raise ValueError("rotation is not orthonormal within tolerance")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map world points (..., 3) into the camera frame."""
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise ValueError("ray direction must be nonzero")
        if abs(n - 1.0) > _ORTHO_TOL:
            d = d / n
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class PluckerEmbedding:
    """The 6-vector (o x d, d) identifying the ray's line."""

    moment: np.ndarray
    direction: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.moment, self.direction])


def plucker(ray: Ray) -> PluckerEmbedding:
    """Moment/direction embedding; invariant to sliding the origin along the ray."""
    return PluckerEmbedding(np.cross(ray.origin, ray.direction), ray.direction.copy())


def ray_through(pose: CameraPose, x: float, y: float) -> Ray:
    """Ray through continuous image coordinates (x, y), in pixels."""
    K = pose.intrinsics
    d_cam = np.array([(x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0])
    d_world = pose.rotation @ d_cam
    return Ray(pose.center.copy(), d_world / np.linalg.norm(d_world))


def pixel_ray(pose: CameraPose, pixel: tuple[float, float]) -> Ray:
    """Ray through the center of integer pixel (u, v)."""
    u, v = pixel
    K = pose.intrinsics
    if not (0 <= u < K.width and 0 <= v < K.height):
        raise ValueError(f"pixel ({u}, {v}) outside image extent {K.width}x{K.height}")
    return ray_through(pose, u + 0.5, v + 0.5)


def project(pose: CameraPose, point) -> tuple[float, float, float]:
    """Pinhole projection of a world point to (u, v, depth).

    A nonpositive depth signals an out-of-frustum (behind-camera) point; no
    exception is raised for it.
    """
    p_cam = pose.world_to_camera(np.asarray(point, dtype=np.float64))
    z = float(p_cam[2])
    if z <= 0:
        return float("nan"), float("nan"), z
    K = pose.intrinsics
    u = K.fx * p_cam[0] / z + K.cx
    v = K.fy * p_cam[1] / z + K.cy
    return float(u), float(v), z


def project_points(pose: CameraPose, points: np.ndarray):
    """Vectorized projection: (N,3) world points -> (u, v, depth) arrays.

    Behind-camera points get depth <= 0 and NaN pixel coordinates.
    """
    p_cam = pose.world_to_camera(points)
    z = p_cam[:, 2]
    K = pose.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(z > 0, K.fx * p_cam[:, 0] / z + K.cx, np.nan)
        v = np.where(z > 0, K.fy * p_cam[:, 1] / z + K.cy, np.nan)
    return u, v, z


def ray_grid(pose: CameraPose, height: int | None = None, width: int | None = None,
             stride: int = 1, dtype=np.float64) -> np.ndarray:
    """Unit world-frame ray directions through pixel centers, shape (H, W, 3).

    With ``stride`` > 1 the grid covers the stride-downsampled image and each
    ray passes through the center of its stride x stride patch.
    """
    K = pose.intrinsics
    H = (height if height is not None else K.height) // stride
    W = (width if width is not None else K.width) // stride
    xs = (np.arange(W) + 0.5) * stride
    ys = (np.arange(H) + 0.5) * stride
    gx = (xs[None, :] - K.cx) / K.fx
    gy = (ys[:, None] - K.cy) / K.fy
    d_cam = np.stack([np.broadcast_to(gx, (H, W)), np.broadcast_to(gy, (H, W)), np.ones((H, W))], axis=-1)
    d_world = d_cam @ pose.rotation.T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    return d_world.astype(dtype)


def plucker_grid(pose: CameraPose, stride: int = 1, dtype=np.float64) -> np.ndarray:
    """Per-pixel (o x d, d) 6-vectors, shape (H/stride, W/stride, 6)."""
    d = ray_grid(pose, stride=stride)
    o = pose.center[None, None, :]
    m = np.cross(np.broadcast_to(o, d.shape), d)
    return np.concatenate([m, d], axis=-1).astype(dtype)


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-from-camera rotation for a camera at ``center`` looking at ``target``."""
    center = np.asarray(center, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - center
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(fwd, up)) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=1)


def orbit_pose(azimuth_deg: float, elevation_deg: float, radius: float, intrinsics: Intrinsics,
               target=(0.0, 0.0, 0.0)) -> CameraPose:
    """Camera on a circle of fixed elevation and radius, looking at ``target``."""
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    center = np.array(target, dtype=np.float64) + radius * np.array(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
    )
    return CameraPose(look_at(center, target), center, intrinsics)


def circular_path(n_views: int, elevation_deg: float, radius: float, intrinsics: Intrinsics,
                  azimuth_offset_deg: float = 0.0) -> list[CameraPose]:
    """Azimuth-uniform circular camera path, all cameras looking at the origin."""
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    step = 360.0 / n_views
    return [orbit_pose(azimuth_offset_deg + i * step, elevation_deg, radius, intrinsics) for i in range(n_views)]


def intrinsics_from_fov(width: int, height: int, fov_x_deg: float) -> Intrinsics:
    """Square-pixel intrinsics from a horizontal field of view, centered principal point."""
    fx = 0.5 * width / np.tan(0.5 * np.deg2rad(fov_x_deg))
    return Intrinsics(float(fx), float(fx), width / 2.0, height / 2.0, width, height)


# ------------------------------------------------------------- serialization

def pose_to_json(pose: CameraPose) -> dict:
    """One JSON record per view: rotation row-major, translation, intrinsics, extent."""
    K = pose.intrinsics
    return {
        "rotation": [float(x) for x in pose.rotation.reshape(-1)],
        "translation": [float(x) for x in pose.translation],
        "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
        "width": K.width, "height": K.height,
    }


def pose_from_json(record: dict) -> CameraPose:
    K = Intrinsics(record["fx"], record["fy"], record["cx"], record["cy"],
                   int(record["width"]), int(record["height"]))
    R = np.asarray(record["rotation"], dtype=np.float64).reshape(3, 3)
    t = np.asarray(record["translation"], dtype=np.float64)
    return CameraPose(R, t, K)


def save_pose(path, pose: CameraPose) -> None:
    with open(path, "w") as f:
        json.dump(pose_to_json(pose), f, indent=1)


def load_pose(path) -> CameraPose:
    with open(path) as f:
        return pose_from_json(json.load(f))
