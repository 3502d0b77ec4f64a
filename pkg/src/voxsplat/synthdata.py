"""Synthetic scenes: analytic primitives, object-space textures, a reference
ray tracer producing RGB / normal / depth / alpha maps, ground-truth surface
samples, and the on-disk viewset layout consumed by training."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import camera as cam
from . import io as vio

_EPS = 1e-9
_T_MIN = 1e-6


# ------------------------------------------------------------------ textures

@dataclass(frozen=True)
class Texture:
    kind: str  # solid | checker | gradient
    colors: np.ndarray  # (1,3) or (2,3)
    scale: float = 0.25  # checker cell edge, world units
    axis: int = 2  # gradient axis in object space

    def albedo(self, p_off: np.ndarray, extents: np.ndarray) -> np.ndarray:
        """Per-point base color; ``p_off`` is (N,3) relative to the primitive
        center, ``extents`` the primitive's half extents for normalization."""
        if self.kind == "solid":
            return np.broadcast_to(self.colors[0], (p_off.shape[0], 3)).copy()
        if self.kind == "checker":
            parity = np.floor(p_off / self.scale).sum(axis=1).astype(np.int64) & 1
            return np.where(parity[:, None] == 0, self.colors[0], self.colors[1])
        if self.kind == "gradient":
            t = np.clip(0.5 + 0.5 * p_off[:, self.axis] / extents[self.axis], 0.0, 1.0)
            return self.colors[0] * (1.0 - t[:, None]) + self.colors[1] * t[:, None]
        raise ValueError(f"unknown texture kind {self.kind!r}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "colors": self.colors.tolist(),
                "scale": self.scale, "axis": self.axis}

    @staticmethod
    def from_json(rec: dict) -> "Texture":
        return Texture(rec["kind"], np.asarray(rec["colors"], dtype=np.float64),
                       float(rec.get("scale", 0.25)), int(rec.get("axis", 2)))


# ---------------------------------------------------------------- primitives

@dataclass(frozen=True)
class Primitive:
    kind: str  # sphere | box | superellipsoid
    center: np.ndarray
    size: np.ndarray  # radius (1,) | half extents (3,) | radii (3,)
    texture: Texture
    power: float = 4.0  # superellipsoid exponent

    @property
    def extents(self) -> np.ndarray:
        if self.kind == "sphere":
            return np.full(3, float(self.size[0]))
        return self.size

    # implicit surface f < 0 inside, > 0 outside
    def implicit(self, p: np.ndarray) -> np.ndarray:
        q = p - self.center
        if self.kind == "sphere":
            return np.linalg.norm(q, axis=-1) - self.size[0]
        if self.kind == "box":
            return np.max(np.abs(q) - self.size, axis=-1)
        if self.kind == "superellipsoid":
            return (np.abs(q / self.size) ** self.power).sum(axis=-1) - 1.0
        raise ValueError(f"unknown primitive kind {self.kind!r}")

    def normal(self, p: np.ndarray) -> np.ndarray:
        q = p - self.center
        if self.kind == "sphere":
            n = q
        elif self.kind == "box":
            # outward face axis: the coordinate closest to its own face plane
            d = self.size - np.abs(q)
            axis = np.argmin(d, axis=-1)
            n = np.zeros_like(q)
            rows = np.arange(q.shape[0])
            n[rows, axis] = np.sign(q[rows, axis])
        else:
            n = (self.power / self.size) * np.abs(q / self.size) ** (self.power - 1.0) * np.sign(q)
        return n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), _EPS)

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """First hit parameter t per ray, +inf for misses. ``origin`` is (3,),
        ``dirs`` (N,3) unit."""
        if self.kind == "sphere":
            return self._intersect_sphere(origin, dirs)
        tn, tf, _ = self._slab(origin, dirs, self.extents)
        if self.kind == "box":
            t = np.where(tn > _T_MIN, tn, tf)
            return np.where((tn <= tf) & (t > _T_MIN), t, np.inf)
        return self._intersect_bisect(origin, dirs, tn, tf)

    def _intersect_sphere(self, origin, dirs):
        oc = origin - self.center
        b = dirs @ oc
        disc = b * b - (oc @ oc - self.size[0] ** 2)
        safe = np.sqrt(np.maximum(disc, 0.0))
        t_near, t_far = -b - safe, -b + safe
        t = np.where(t_near > _T_MIN, t_near, t_far)
        return np.where((disc >= 0) & (t > _T_MIN), t, np.inf)

    def _slab(self, origin, dirs, half):
        d = np.where(np.abs(dirs) < 1e-30, 1e-30, dirs)
        lo = (self.center - half - origin) / d
        hi = (self.center + half - origin) / d
        t1, t2 = np.minimum(lo, hi), np.maximum(lo, hi)
        return t1.max(axis=-1), t2.min(axis=-1), np.argmax(t1, axis=-1)

    def _intersect_bisect(self, origin, dirs, tn, tf, steps: int = 64, iters: int = 48):
        # march the slab interval for a sign change, then bisect; camera
        # origins sit outside the bounding box so f starts positive
        valid = tn <= tf
        tn = np.where(valid, np.maximum(tn, _T_MIN), 0.0)
        tf = np.where(valid, tf, 0.0)
        ts = tn[:, None] + (tf - tn)[:, None] * np.linspace(0.0, 1.0, steps)[None, :]
        fv = self.implicit(origin + ts[..., None] * dirs[:, None, :])
        neg = fv <= 0.0
        first = np.argmax(neg, axis=1)
        hit = valid & neg.any(axis=1) & (first > 0)
        lo = np.take_along_axis(ts, np.maximum(first - 1, 0)[:, None], axis=1)[:, 0]
        hi = np.take_along_axis(ts, first[:, None], axis=1)[:, 0]
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            fm = self.implicit(origin + mid[:, None] * dirs)
            lo = np.where(fm > 0.0, mid, lo)
            hi = np.where(fm > 0.0, hi, mid)
        return np.where(hit, 0.5 * (lo + hi), np.inf)

    def surface_points(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Points on this primitive's surface (before union visibility)."""
        if self.kind == "box":
            return self._box_surface(n, rng)
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        if self.kind == "sphere":
            return self.center + self.size[0] * dirs
        # star-shaped: f(center + s*dir) is monotone in s, bisect per direction
        lo = np.zeros(n)
        hi = np.full(n, float(self.size.max()) * 2.0)
        for _ in range(48):
            mid = 0.5 * (lo + hi)
            inside = self.implicit(self.center + mid[:, None] * dirs) < 0.0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        return self.center + (0.5 * (lo + hi))[:, None] * dirs

    def _box_surface(self, n, rng):
        h = self.size
        areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
        areas = np.repeat(areas / areas.sum() / 2.0, 2)
        face = rng.choice(6, size=n, p=areas)
        pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * h
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        pts[np.arange(n), axis] = sign * h[axis]
        return self.center + pts

    def to_json(self) -> dict:
        return {"kind": self.kind, "center": self.center.tolist(),
                "size": self.size.tolist(), "power": self.power,
                "texture": self.texture.to_json()}

    @staticmethod
    def from_json(rec: dict) -> "Primitive":
        return Primitive(rec["kind"], np.asarray(rec["center"], dtype=np.float64),
                         np.asarray(rec["size"], dtype=np.float64),
                         Texture.from_json(rec["texture"]), float(rec.get("power", 4.0)))


# -------------------------------------------------------------------- scenes

@dataclass(frozen=True)
class Scene:
    primitives: tuple[Primitive, ...]
    light_dir: np.ndarray = field(default_factory=lambda: np.array([0.4, -0.3, 0.8]))
    ambient: float = 0.35
    diffuse: float = 0.65
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        l = np.asarray(self.light_dir, dtype=np.float64)
        object.__setattr__(self, "light_dir", l / np.linalg.norm(l))

    def to_json(self) -> dict:
        return {"primitives": [p.to_json() for p in self.primitives],
                "light_dir": self.light_dir.tolist(), "ambient": self.ambient,
                "diffuse": self.diffuse, "background": self.background.tolist()}

    @staticmethod
    def from_json(rec: dict) -> "Scene":
        return Scene(tuple(Primitive.from_json(p) for p in rec["primitives"]),
                     np.asarray(rec["light_dir"], dtype=np.float64),
                     float(rec["ambient"]), float(rec["diffuse"]),
                     np.asarray(rec["background"], dtype=np.float64))


def fixture_scene() -> Scene:
    """Checkered sphere plus gradient box, both inside the unit working cube."""
    sphere = Primitive("sphere", np.array([-0.15, -0.1, 0.0]), np.array([0.45]),
                       Texture("checker", np.array([[0.9, 0.25, 0.2], [0.95, 0.9, 0.85]]), scale=0.22))
    box = Primitive("box", np.array([0.35, 0.2, 0.0]), np.array([0.3, 0.25, 0.35]),
                    Texture("gradient", np.array([[0.2, 0.45, 0.9], [0.9, 0.85, 0.3]]), axis=2))
    return Scene((sphere, box))


def render_reference(scene: Scene, pose: cam.CameraPose) -> dict:
    """Exact ray-traced view: rgb (H,W,3), camera-frame normal (H,W,3),
    depth as camera-frame z (H,W, zero on misses), and binary alpha (H,W)."""
    K = pose.intrinsics
    H, W = K.height, K.width
    dirs = cam.ray_grid(pose).reshape(-1, 3)
    origin = pose.center
    n_px = dirs.shape[0]

    t_all = np.stack([p.intersect(origin, dirs) for p in scene.primitives])
    owner = np.argmin(t_all, axis=0)
    t = t_all[owner, np.arange(n_px)]
    hit = np.isfinite(t)

    rgb = np.broadcast_to(scene.background, (n_px, 3)).copy()
    normal_w = np.zeros((n_px, 3))
    for i, prim in enumerate(scene.primitives):
        sel = hit & (owner == i)
        if not sel.any():
            continue
        p = origin + t[sel, None] * dirs[sel]
        n = prim.normal(p)
        albedo = prim.texture.albedo(p - prim.center, prim.extents)
        shade = scene.ambient + scene.diffuse * np.maximum(n @ scene.light_dir, 0.0)
        rgb[sel] = np.clip(albedo * shade[:, None], 0.0, 1.0)
        normal_w[sel] = n

    fwd = pose.rotation[:, 2]
    depth = np.where(hit, t * (dirs @ fwd), 0.0)
    normal_c = normal_w @ pose.rotation
    return {
        "rgb": rgb.reshape(H, W, 3).astype(np.float32),
        "normal": normal_c.reshape(H, W, 3).astype(np.float32),
        "depth": depth.reshape(H, W).astype(np.float32),
        "alpha": hit.reshape(H, W).astype(np.float32),
    }


def surface_samples(scene: Scene, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n,3) points on the union surface: per-primitive samples with points
    strictly inside any other primitive rejected."""
    out = []
    got = 0
    while got < n:
        batch = max(n - got, 64)
        per = rng.integers(0, len(scene.primitives), size=batch)
        for i, prim in enumerate(scene.primitives):
            k = int((per == i).sum())
            if k == 0:
                continue
            pts = prim.surface_points(k, rng)
            keep = np.ones(k, dtype=bool)
            for j, other in enumerate(scene.primitives):
                if j != i:
                    keep &= other.implicit(pts) >= 0.0
            pts = pts[keep]
            out.append(pts)
            got += pts.shape[0]
    return np.concatenate(out)[:n]


# ------------------------------------------------------------------ viewsets

@dataclass(frozen=True)
class ViewsetSpec:
    scene: Scene
    n_views: int = 8
    n_heldout: int = 4
    image_size: int = 64
    fov_deg: float = 50.0
    radius: float = 2.2
    elevation_deg: float = 20.0

    def to_json(self) -> dict:
        return {"scene": self.scene.to_json(), "n_views": self.n_views,
                "n_heldout": self.n_heldout, "image_size": self.image_size,
                "fov_deg": self.fov_deg, "radius": self.radius,
                "elevation_deg": self.elevation_deg}

    @staticmethod
    def from_json(rec: dict) -> "ViewsetSpec":
        return ViewsetSpec(Scene.from_json(rec["scene"]), int(rec["n_views"]),
                           int(rec["n_heldout"]), int(rec["image_size"]),
                           float(rec["fov_deg"]), float(rec["radius"]),
                           float(rec["elevation_deg"]))


def make_viewset(spec: ViewsetSpec) -> tuple[list[dict], list[dict]]:
    """Render (train_views, heldout_views); heldout cameras sit on the same
    orbit, azimuth-offset by half a step from the training cameras."""
    K = cam.intrinsics_from_fov(spec.image_size, spec.image_size, spec.fov_deg)
    train_poses = cam.circular_path(spec.n_views, spec.elevation_deg, spec.radius, K)
    offset = 180.0 / max(spec.n_views, spec.n_heldout)
    held_poses = cam.circular_path(spec.n_heldout, spec.elevation_deg, spec.radius, K,
                                   azimuth_offset_deg=offset)
    train = [dict(render_reference(spec.scene, p), pose=p) for p in train_poses]
    held = [dict(render_reference(spec.scene, p), pose=p) for p in held_poses]
    return train, held


def inconsistency_perturb(views: list[dict], magnitude: float,
                          rng: np.random.Generator) -> list[dict]:
    """Simulate cross-view inconsistency: per-view color gains, integer pixel
    shifts, and normal noise, all scaled by ``magnitude``. Zero magnitude
    returns the input untouched."""
    if magnitude == 0.0:
        return views
    out = []
    for view in views:
        gains = 1.0 + magnitude * rng.normal(size=3)
        rgb = np.clip(view["rgb"] * gains.astype(np.float32), 0.0, 1.0)
        max_shift = max(int(round(4 * magnitude)), 0)
        du, dv = (int(rng.integers(-max_shift, max_shift + 1)) for _ in range(2))
        rgb = np.roll(rgb, (dv, du), axis=(0, 1))
        normal = view["normal"] + magnitude * rng.normal(size=view["normal"].shape).astype(np.float32)
        normal /= np.maximum(np.linalg.norm(normal, axis=-1, keepdims=True), _EPS).astype(np.float32)
        out.append(dict(view, rgb=rgb.astype(np.float32), normal=normal.astype(np.float32)))
    return out


def save_viewset(scene_dir, spec: ViewsetSpec, train: list[dict], held: list[dict]) -> None:
    os.makedirs(scene_dir, exist_ok=True)
    with open(os.path.join(scene_dir, "scene.json"), "w") as f:
        json.dump(spec.to_json(), f, indent=1)
    for sub, views in (("views", train), ("heldout", held)):
        d = os.path.join(scene_dir, sub)
        os.makedirs(d, exist_ok=True)
        for i, view in enumerate(views):
            stem = os.path.join(d, f"view_{i:03d}")
            vio.write_png(stem + ".rgb.png", view["rgb"])
            vio.write_pfm(stem + ".normal.pfm", view["normal"])
            vio.write_pfm(stem + ".depth.pfm", view["depth"])
            vio.write_png(stem + ".alpha.png", view["alpha"])
            cam.save_pose(stem + ".pose.json", view["pose"])


def load_viewset(scene_dir) -> tuple[ViewsetSpec, list[dict], list[dict]]:
    with open(os.path.join(scene_dir, "scene.json")) as f:
        spec = ViewsetSpec.from_json(json.load(f))
    sets = []
    for sub in ("views", "heldout"):
        d = os.path.join(scene_dir, sub)
        views = []
        i = 0
        while os.path.exists(os.path.join(d, f"view_{i:03d}.pose.json")):
            stem = os.path.join(d, f"view_{i:03d}")
            views.append({
                "rgb": vio.read_png(stem + ".rgb.png"),
                "normal": vio.read_pfm(stem + ".normal.pfm"),
                "depth": vio.read_pfm(stem + ".depth.pfm"),
                "alpha": vio.read_png(stem + ".alpha.png"),
                "pose": cam.load_pose(stem + ".pose.json"),
            })
            i += 1
        sets.append(views)
    return spec, sets[0], sets[1]
