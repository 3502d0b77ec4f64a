"""File formats: PFM, PNG, PLY, volume dumps, checkpoints. Round trips must
be exact for float formats and quantization-only for PNG."""

import numpy as np
import pytest

from voxsplat import io


def test_pfm_rgb_round_trip(tmp_path, rng):
    img = rng.uniform(-5.0, 5.0, (9, 7, 3)).astype(np.float32)
    path = tmp_path / "m.pfm"
    io.write_pfm(path, img)
    back = io.read_pfm(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, img)


def test_pfm_gray_round_trip(tmp_path, rng):
    depth = rng.uniform(0.0, 10.0, (5, 8)).astype(np.float32)
    path = tmp_path / "d.pfm"
    io.write_pfm(path, depth)
    assert np.array_equal(io.read_pfm(path), depth)


def test_pfm_rejects_bad_shapes(tmp_path):
    with pytest.raises(ValueError):
        io.write_pfm(tmp_path / "x.pfm", np.zeros((4, 4, 2), np.float32))
    bad = tmp_path / "bad.pfm"
    bad.write_bytes(b"P6\n1 1\n-1.0\n" + b"\x00" * 4)
    with pytest.raises(ValueError):
        io.read_pfm(bad)


def test_png_round_trip_is_quantization(tmp_path, rng):
    img = rng.uniform(0.0, 1.0, (6, 6, 3)).astype(np.float32)
    path = tmp_path / "i.png"
    io.write_png(path, img)
    back = io.read_png(path)
    assert back.shape == (6, 6, 3)
    assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-7
    # a second write of the read-back is exact
    io.write_png(path, back)
    assert np.array_equal(io.read_png(path), back)


def test_png_gray_and_uint8(tmp_path):
    gray = np.linspace(0, 1, 16, dtype=np.float32).reshape(4, 4)
    path = tmp_path / "g.png"
    io.write_png(path, gray)
    assert io.read_png(path).shape == (4, 4)
    io.write_png(path, (gray[..., None] * 255).astype(np.uint8))
    assert io.read_png(path).shape == (4, 4)


def test_ply_round_trip(tmp_path, rng):
    rows = rng.normal(size=(17, 22)).astype(np.float32)
    path = tmp_path / "s.ply"
    io.write_ply(path, rows, sh_channels=12)
    back, names = io.read_ply(path)
    assert np.array_equal(back, rows)
    assert names[:10] == list(io.PLY_PROPERTIES)
    assert names[10:] == [f"sh_{i}" for i in range(12)]


def test_ply_rejects_wrong_width(tmp_path):
    with pytest.raises(ValueError):
        io.write_ply(tmp_path / "s.ply", np.zeros((3, 11), np.float32), sh_channels=12)
    notply = tmp_path / "n.ply"
    notply.write_bytes(b"obj\n")
    with pytest.raises(ValueError):
        io.read_ply(notply)


def test_volume_round_trip(tmp_path, rng):
    vol = rng.normal(size=(4, 3, 5, 6)).astype(np.float32)
    path = tmp_path / "v.vol"
    io.write_volume(path, vol, meta={"step": 7})
    back = io.read_volume(path)
    assert np.array_equal(back, vol)
    with pytest.raises(ValueError):
        io.write_volume(tmp_path / "w.vol", np.zeros((2, 2, 2), np.float32))


def test_checkpoint_round_trip(tmp_path, rng):
    arrays = {
        "model.w": rng.normal(size=(3, 4)).astype(np.float32),
        "opt.t": np.array(17, dtype=np.int64),
        "opt.m.model.w": rng.normal(size=(3, 4)).astype(np.float32),
    }
    meta = {"step": 17, "note": {"nested": [1, 2, 3]}}
    path = tmp_path / "c.vxsp"
    io.write_checkpoint(path, arrays, meta)
    back, meta2 = io.read_checkpoint(path)
    assert meta2 == meta
    assert set(back) == set(arrays)
    for k in arrays:
        assert np.array_equal(back[k], arrays[k])
        assert back[k].dtype == arrays[k].dtype


def test_checkpoint_save_load_save_identical(tmp_path, rng):
    arrays = {"a": rng.normal(size=(5,)).astype(np.float32),
              "b": np.arange(6, dtype=np.int64).reshape(2, 3)}
    p1, p2 = tmp_path / "c1.vxsp", tmp_path / "c2.vxsp"
    io.write_checkpoint(p1, arrays, {"step": 1})
    loaded, meta = io.read_checkpoint(p1)
    io.write_checkpoint(p2, loaded, meta)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.vxsp"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ValueError):
        io.read_checkpoint(path)
