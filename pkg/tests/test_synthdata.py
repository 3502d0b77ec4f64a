"""Synthetic scene generation: analytic intersections, reference maps,
surface sampling, viewset persistence, and the inconsistency perturbation."""

import numpy as np
import pytest

from voxsplat import camera as cam
from voxsplat import synthdata as sd


def solid(rgb):
    return sd.Texture("solid", np.array([rgb], dtype=np.float64))


def frontal_pose(size=32, radius=3.0, fov=40.0):
    K = cam.intrinsics_from_fov(size, size, fov)
    return cam.orbit_pose(0.0, 0.0, radius, K)


def test_sphere_center_ray_analytic():
    sphere = sd.Primitive("sphere", np.zeros(3), np.array([0.5]), solid((1, 0, 0)))
    scene = sd.Scene((sphere,))
    pose = frontal_pose()
    view = sd.render_reference(scene, pose)
    K = pose.intrinsics
    cy, cx = int(K.cy), int(K.cx)
    # center pixel is offset half a pixel from the axis; stay within a pixel's
    # worth of slack on depth, exact on alpha
    assert view["alpha"][cy, cx] == 1.0
    assert abs(view["depth"][cy, cx] - 2.5) < 5e-3
    n = view["normal"][cy, cx]
    assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-5)
    assert n[2] < -0.99  # camera-frame normal points back at the camera


def test_miss_rays_are_background():
    sphere = sd.Primitive("sphere", np.zeros(3), np.array([0.2]), solid((1, 1, 1)))
    view = sd.render_reference(sd.Scene((sphere,)), frontal_pose())
    assert view["alpha"][0, 0] == 0.0
    assert view["depth"][0, 0] == 0.0
    assert np.all(view["rgb"][0, 0] == 0.0)
    assert np.all(view["normal"][0, 0] == 0.0)


def test_alpha_iff_depth_and_unit_normals():
    view = sd.render_reference(sd.fixture_scene(), frontal_pose(size=48))
    hit = view["alpha"] > 0.5
    assert np.array_equal(hit, view["depth"] > 0.0)
    norms = np.linalg.norm(view["normal"][hit], axis=-1)
    assert np.allclose(norms, 1.0, atol=1e-4)
    assert np.all(view["rgb"] >= 0.0) and np.all(view["rgb"] <= 1.0)


def test_box_face_normal_and_depth():
    box = sd.Primitive("box", np.zeros(3), np.array([0.3, 0.3, 0.3]), solid((0, 1, 0)))
    pose = frontal_pose(radius=2.0)
    view = sd.render_reference(sd.Scene((box,)), pose)
    K = pose.intrinsics
    n = view["normal"][int(K.cy), int(K.cx)]
    assert np.allclose(n, [0, 0, -1], atol=1e-9)
    assert abs(view["depth"][int(K.cy), int(K.cx)] - 1.7) < 1e-6


def test_superellipsoid_power_two_is_ellipsoid():
    radii = np.array([0.4, 0.3, 0.5])
    se = sd.Primitive("superellipsoid", np.zeros(3), radii, solid((1, 1, 1)), power=2.0)
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(64, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origin = np.array([0.0, 0.0, 3.0])
    t = se.intersect(origin, dirs)
    hit = np.isfinite(t)
    assert hit.any()
    p = origin + t[hit, None] * dirs[hit]
    # closed form: x^2/a^2 + y^2/b^2 + z^2/c^2 = 1
    assert np.allclose(((p / radii) ** 2).sum(axis=1), 1.0, atol=1e-6)


def test_implicit_sign_convention():
    prim = sd.Primitive("superellipsoid", np.array([0.1, 0.0, 0.0]),
                        np.array([0.4, 0.4, 0.4]), solid((1, 1, 1)))
    assert prim.implicit(np.array([[0.1, 0.0, 0.0]]))[0] < 0
    assert prim.implicit(np.array([[2.0, 0.0, 0.0]]))[0] > 0
    box = sd.Primitive("box", np.zeros(3), np.array([0.2, 0.2, 0.2]), solid((1, 1, 1)))
    assert box.implicit(np.array([[0.0, 0.0, 0.0]]))[0] == pytest.approx(-0.2)
    assert box.implicit(np.array([[0.3, 0.0, 0.0]]))[0] == pytest.approx(0.1)


@pytest.mark.parametrize("kind,size,power", [
    ("sphere", [0.45], 4.0),
    ("box", [0.3, 0.2, 0.4], 4.0),
    ("superellipsoid", [0.35, 0.45, 0.3], 4.0),
    ("superellipsoid", [0.4, 0.4, 0.4], 8.0),
])
def test_surface_points_lie_on_surface(kind, size, power):
    prim = sd.Primitive(kind, np.array([0.1, -0.05, 0.0]), np.array(size, dtype=np.float64),
                        solid((1, 1, 1)), power=power)
    pts = prim.surface_points(256, np.random.default_rng(1))
    f = prim.implicit(pts)
    assert np.abs(f).max() < 1e-6


def test_surface_samples_reject_interior_points():
    # two overlapping spheres: no sample may sit strictly inside the other
    a = sd.Primitive("sphere", np.array([-0.2, 0.0, 0.0]), np.array([0.4]), solid((1, 0, 0)))
    b = sd.Primitive("sphere", np.array([0.2, 0.0, 0.0]), np.array([0.4]), solid((0, 0, 1)))
    scene = sd.Scene((a, b))
    pts = sd.surface_samples(scene, 512, np.random.default_rng(2))
    assert pts.shape == (512, 3)
    fa, fb = a.implicit(pts), b.implicit(pts)
    assert np.minimum(np.abs(fa), np.abs(fb)).max() < 1e-6
    assert fa.min() > -1e-6 and fb.min() > -1e-6


def test_checker_texture_alternates():
    tex = sd.Texture("checker", np.array([[1.0, 0, 0], [0, 0, 1.0]]), scale=0.25)
    p = np.array([[0.1, 0.1, 0.1], [0.35, 0.1, 0.1]])
    c = tex.albedo(p, np.ones(3))
    assert np.allclose(c[0], [1, 0, 0])
    assert np.allclose(c[1], [0, 0, 1])


def test_gradient_texture_endpoints():
    tex = sd.Texture("gradient", np.array([[0.0, 0, 0], [1.0, 1, 1]]), axis=2)
    ext = np.array([1.0, 1.0, 0.5])
    c = tex.albedo(np.array([[0, 0, -0.5], [0, 0, 0.5], [0, 0, 0.0]]), ext)
    assert np.allclose(c[0], 0.0)
    assert np.allclose(c[1], 1.0)
    assert np.allclose(c[2], 0.5)


def test_viewset_round_trip(tmp_path):
    spec = sd.ViewsetSpec(sd.fixture_scene(), n_views=3, n_heldout=2, image_size=16)
    train, held = sd.make_viewset(spec)
    assert len(train) == 3 and len(held) == 2
    sd.save_viewset(tmp_path / "scene0", spec, train, held)
    spec2, train2, held2 = sd.load_viewset(tmp_path / "scene0")
    assert _specs_close(spec2, spec)
    assert len(train2) == 3 and len(held2) == 2
    for a, b in zip(train + held, train2 + held2):
        # PNG storage quantizes rgb/alpha to 8 bits; float maps are exact
        assert np.abs(a["rgb"] - b["rgb"]).max() <= 0.5 / 255.0 + 1e-7
        assert np.array_equal(a["depth"], b["depth"])
        assert np.abs(a["normal"] - b["normal"]).max() < 1e-6
        assert np.allclose(a["pose"].rotation, b["pose"].rotation, atol=1e-15)
        assert np.allclose(a["pose"].center, b["pose"].center, atol=1e-15)


def test_heldout_cameras_interleave():
    spec = sd.ViewsetSpec(sd.fixture_scene(), n_views=4, n_heldout=4, image_size=8)
    train, held = sd.make_viewset(spec)
    az = lambda v: np.rad2deg(np.arctan2(v["pose"].center[1], v["pose"].center[0]))
    train_az = sorted(az(v) % 360 for v in train)
    held_az = sorted(az(v) % 360 for v in held)
    assert np.allclose(np.array(held_az) - np.array(train_az), 45.0, atol=1e-9)


def test_perturb_zero_magnitude_is_identity():
    spec = sd.ViewsetSpec(sd.fixture_scene(), n_views=2, n_heldout=1, image_size=8)
    train, _ = sd.make_viewset(spec)
    out = sd.inconsistency_perturb(train, 0.0, np.random.default_rng(0))
    assert out is train


def test_perturb_changes_views_but_keeps_unit_normals():
    spec = sd.ViewsetSpec(sd.fixture_scene(), n_views=2, n_heldout=1, image_size=16)
    train, _ = sd.make_viewset(spec)
    out = sd.inconsistency_perturb(train, 0.3, np.random.default_rng(0))
    assert not np.array_equal(out[0]["rgb"], train[0]["rgb"])
    norms = np.linalg.norm(out[0]["normal"], axis=-1)
    assert np.allclose(norms, 1.0, atol=1e-5)
    assert np.array_equal(out[0]["depth"], train[0]["depth"])


def _specs_close(a: sd.ViewsetSpec, b: sd.ViewsetSpec) -> bool:
    ja, jb = a.to_json(), b.to_json()
    sa, sb = ja.pop("scene"), jb.pop("scene")
    # light_dir is renormalized on every construction, so compare numerically
    return (ja == jb and sa["primitives"] == sb["primitives"]
            and np.allclose(sa["light_dir"], sb["light_dir"], atol=1e-12)
            and sa["ambient"] == sb["ambient"] and sa["background"] == sb["background"])


def test_scene_json_round_trip():
    scene = sd.fixture_scene()
    back = sd.Scene.from_json(scene.to_json())
    assert all(pa.to_json() == pb.to_json() for pa, pb in zip(back.primitives, scene.primitives))
    assert np.allclose(back.light_dir, scene.light_dir, atol=1e-12)
    view_a = sd.render_reference(scene, frontal_pose(size=8))
    view_b = sd.render_reference(back, frontal_pose(size=8))
    assert np.array_equal(view_a["rgb"], view_b["rgb"])
