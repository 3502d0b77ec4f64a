"""Volume refinement and cross-volume fusion: channel schedules, grouped
attention algebra, zero-init identities, and the tied symmetric mode."""

import numpy as np
import pytest

from voxsplat import fusion as fu
from voxsplat import tensor as T
from voxsplat.tensor import ShapeError, Tensor
from voxsplat.volume import FeatureVolume


def volume(rng, channels, res=4):
    data = rng.normal(size=(channels, res, res, res)).astype(np.float32)
    return FeatureVolume(Tensor(data), res)


def test_refiner_channel_schedule(rng):
    ref = fu.VolumeRefiner(rng, c_in=64, schedule=(64, 32, 16, 8))
    out = ref(volume(rng, 64, res=4))
    assert out.data.shape == (8, 4, 4, 4)
    assert out.resolution == 4
    assert ref.c_out == 8


def test_refiner_extent_16_cubed(rng):
    # full-size pass: 16^3 x 64 in, 16^3 x 8 out
    ref = fu.VolumeRefiner(rng, c_in=64, schedule=(64, 32, 16, 8))
    out = ref(volume(rng, 64, res=16))
    assert out.data.shape == (8, 16, 16, 16)


def test_residual_block_channel_norm(rng):
    block = fu.VoxelResidualBlock(rng, 8, 6)
    out = block(volume(rng, 8).data).numpy()
    # per-voxel normalization across channels
    assert np.abs(out.mean(axis=0)).max() < 1e-5
    assert np.abs(out.var(axis=0) - 1.0).max() < 1e-2
    with pytest.raises(ShapeError):
        block(volume(rng, 5).data)


def test_fold_unfold_identity(rng):
    rows = Tensor(rng.normal(size=(32, 6)).astype(np.float32))
    tokens = fu.unfold_groups(rows, 8)
    assert tokens.shape == (8, 4, 6)
    back = fu.fold_groups(tokens)
    assert np.array_equal(back.numpy(), rows.numpy())
    # slabs are contiguous voxel runs
    assert np.array_equal(tokens.numpy()[2], rows.numpy()[8:12])
    with pytest.raises(ShapeError):
        fu.unfold_groups(rows, 5)


def test_attention_rows_sum_to_one(rng):
    blk = fu.AttentionBlock(rng, channels=8, heads=2)
    x = Tensor(rng.normal(size=(3, 5, 8)).astype(np.float32))
    y = Tensor(rng.normal(size=(3, 7, 8)).astype(np.float32))
    attn = blk.attention(x, y).numpy()
    assert attn.shape == (3, 2, 5, 7)
    assert np.allclose(attn.sum(axis=-1), 1.0, atol=1e-6)


def test_attention_block_is_identity_at_init(rng):
    blk = fu.AttentionBlock(rng, channels=8, heads=4)
    x = Tensor(rng.normal(size=(2, 6, 8)).astype(np.float32))
    y = Tensor(rng.normal(size=(2, 6, 8)).astype(np.float32))
    assert np.array_equal(blk(x, y).numpy(), x.numpy())


def test_attention_hand_oracle():
    # single head, two tokens, weights set by hand; layer_norm disabled
    rng = np.random.default_rng(0)
    blk = fu.AttentionBlock(rng, channels=2, heads=1, norm_queries=False)
    blk.wq.w.data = np.eye(2, dtype=np.float32)
    blk.wk.w.data = np.eye(2, dtype=np.float32)
    blk.wv.w.data = np.eye(2, dtype=np.float32)
    blk.wo.w.data = np.eye(2, dtype=np.float32)
    x = Tensor(np.array([[[1.0, 0.0], [0.0, 1.0]]], np.float32))
    scores = np.array([[1.0, 0.0], [0.0, 1.0]]) / np.sqrt(2.0)
    attn = np.exp(scores) / np.exp(scores).sum(axis=1, keepdims=True)
    want_mix = attn @ x.numpy()[0]
    got = blk(x, x).numpy()[0]
    assert np.allclose(got, x.numpy()[0] + want_mix, atol=1e-6)
    got_attn = blk.attention(x, x).numpy()[0, 0]
    assert np.allclose(got_attn, attn, atol=1e-6)


def test_attention_rejects_bad_geometry(rng):
    with pytest.raises(ShapeError):
        fu.AttentionBlock(rng, channels=6, heads=4)
    blk = fu.AttentionBlock(rng, channels=8, heads=2)
    x = Tensor(np.zeros((2, 4, 8), np.float32))
    y = Tensor(np.zeros((3, 4, 8), np.float32))
    with pytest.raises(ShapeError):
        blk(x, y)


def test_fusion_output_shape_and_identity_at_init(rng):
    cvf = fu.CrossVolumeFusion(rng, channels=8, groups=16, heads=4)
    vr, vn = volume(rng, 8), volume(rng, 8)
    fused = cvf(vr, vn)
    assert fused.data.shape == (16, 4, 4, 4)
    # zero-init output projections make fusion exactly concatenation
    want = np.concatenate([vr.rows().numpy(), vn.rows().numpy()], axis=1)
    assert np.array_equal(fused.rows().numpy(), want)


def test_fusion_diverges_from_concat_with_nonzero_wo(rng):
    cvf = fu.CrossVolumeFusion(rng, channels=8, groups=16, heads=4)
    for blk in (cvf.ca_rgb, cvf.ca_nor, cvf.sa):
        blk.wo.w.data = rng.normal(size=blk.wo.w.shape).astype(np.float32) * 0.3
    vr, vn = volume(rng, 8), volume(rng, 8)
    fused = cvf(vr, vn).rows().numpy()
    want = np.concatenate([vr.rows().numpy(), vn.rows().numpy()], axis=1)
    assert np.abs(fused - want).max() > 1e-3


def test_fusion_tied_mode_symmetry(rng):
    cvf = fu.CrossVolumeFusion(rng, channels=8, groups=8, heads=2, tie_cross=True)
    for blk in (cvf.ca_rgb, cvf.sa):
        blk.wo.w.data = rng.normal(size=blk.wo.w.shape).astype(np.float32) * 0.2
    assert cvf.ca_nor is cvf.ca_rgb
    v = volume(rng, 8)
    tokens = fu.unfold_groups(v.rows(), 8)
    # identical inputs through the shared block give identical cross outputs
    r2 = cvf.ca_rgb(tokens, tokens).numpy()
    n2 = cvf.ca_nor(tokens, tokens).numpy()
    assert np.array_equal(r2, n2)
    names = cvf.parameters()
    assert not any(k.startswith("ca_nor.") for k in names)
    assert any(k.startswith("ca_rgb.") for k in names)
    untied = fu.CrossVolumeFusion(rng, channels=8, groups=8, heads=2)
    assert any(k.startswith("ca_nor.") for k in untied.parameters())


def test_fusion_group_locality(rng):
    # tokens only attend within their group: changing group 0 of the rgb
    # volume leaves other groups' outputs alone (wo nonzero so attention acts)
    cvf = fu.CrossVolumeFusion(rng, channels=8, groups=16, heads=4)
    for blk in (cvf.ca_rgb, cvf.ca_nor, cvf.sa):
        blk.wo.w.data = rng.normal(size=blk.wo.w.shape).astype(np.float32) * 0.3
    vr, vn = volume(rng, 8), volume(rng, 8)
    base = cvf(vr, vn).rows().numpy()
    bumped = vr.data.numpy().copy()
    rows = bumped.reshape(8, -1)
    rows[:, 0] += 1.0  # voxel 0 lives in group 0 (contiguous slabs of 4)
    out = cvf(FeatureVolume(Tensor(bumped), 4), vn).rows().numpy()
    group = 64 // 16
    assert np.abs(out[:group] - base[:group]).max() > 1e-4
    assert np.abs(out[group:] - base[group:]).max() < 1e-6


def test_fusion_rejects_mismatched_volumes(rng):
    cvf = fu.CrossVolumeFusion(rng, channels=8, groups=16, heads=4)
    with pytest.raises(ShapeError):
        cvf(volume(rng, 8), volume(rng, 4))
