"""Cross-volume fusion: residual conv blocks shrink each volume's channels,
then grouped cross-attention mixes the RGB and normal volumes in both
directions and self-attention balances their concatenation."""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensor as T
from .tensor import ShapeError, Tensor
from .volume import FeatureVolume, rows_to_grid

DEFAULT_SCHEDULE = (64, 32, 16, 8)
DEFAULT_GROUPS = 16


class VoxelResidualBlock(nn.Module):
    """Two 3x3x3 convs against a 1x1x1 shortcut, added, projected, and
    normalized per voxel across channels. Spatial extent is preserved."""

    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int):
        self.conv_a = nn.Conv3d(rng, c_in, c_out)
        self.conv_b = nn.Conv3d(rng, c_out, c_out)
        self.shortcut = nn.Conv3d(rng, c_in, c_out, kernel=1, padding=0)
        self.proj = nn.Conv3d(rng, c_out, c_out, kernel=1, padding=0)
        self.c_in, self.c_out = c_in, c_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[0] != self.c_in:
            raise ShapeError(f"block expects {self.c_in} channels, got {x.shape[0]}")
        main = T.leaky_relu(self.conv_a(x))
        main = T.leaky_relu(self.conv_b(main))
        short = T.leaky_relu(self.shortcut(x))
        return T.layer_norm(self.proj(main + short), axis=0)


class VolumeRefiner(nn.Module):
    """Stack of residual blocks applying a channel schedule at fixed extent."""

    def __init__(self, rng: np.random.Generator, c_in: int = 32,
                 schedule: tuple[int, ...] = DEFAULT_SCHEDULE):
        widths = (c_in,) + tuple(schedule)
        self.blocks = [VoxelResidualBlock(rng, widths[i], widths[i + 1])
                       for i in range(len(schedule))]
        self.c_out = widths[-1]

    def __call__(self, vol: FeatureVolume) -> FeatureVolume:
        h = vol.data
        for block in self.blocks:
            h = block(h)
        return FeatureVolume(h, vol.resolution)


def unfold_groups(rows: Tensor, groups: int) -> Tensor:
    """(P, C) voxel rows -> (G, P/G, C) contiguous slabs of tokens."""
    n, c = rows.shape
    if n % groups != 0:
        raise ShapeError(f"{n} tokens do not divide into {groups} groups")
    return rows.reshape(groups, n // groups, c)


def fold_groups(tokens: Tensor) -> Tensor:
    """Inverse of unfold_groups; exact bijection."""
    g, s, c = tokens.shape
    return tokens.reshape(g * s, c)


class AttentionBlock(nn.Module):
    """Multi-head scaled dot-product attention with pre-LN on the queries,
    zero-initialized output projection, and a residual add of the raw
    queries, so a fresh block is exactly the identity."""

    def __init__(self, rng: np.random.Generator, channels: int, heads: int = 4,
                 norm_queries: bool = True):
        if channels % heads != 0:
            raise ShapeError(f"{channels} channels do not divide into {heads} heads")
        self.wq = nn.Linear(rng, channels, channels)
        self.wk = nn.Linear(rng, channels, channels)
        self.wv = nn.Linear(rng, channels, channels)
        self.wo = nn.Linear(rng, channels, channels, zero_init=True)
        self.heads = heads
        self.channels = channels
        self.norm_queries = norm_queries

    def _split(self, t: Tensor) -> Tensor:
        g, s, _ = t.shape
        return t.reshape(g, s, self.heads, self.channels // self.heads).transpose((0, 2, 1, 3))

    def attention(self, x_q: Tensor, x_kv: Tensor) -> Tensor:
        """(G, H, S_q, S_kv) attention weights, rows summing to 1."""
        q_in = T.layer_norm(x_q, axis=-1) if self.norm_queries else x_q
        q = self._split(self.wq(q_in))
        k = self._split(self.wk(x_kv))
        scale = 1.0 / np.sqrt(self.channels // self.heads)
        return T.softmax((q @ k.transpose((0, 1, 3, 2))) * scale, axis=-1)

    def __call__(self, x_q: Tensor, x_kv: Tensor) -> Tensor:
        if x_q.shape[0] != x_kv.shape[0]:
            raise ShapeError(f"group counts differ: {x_q.shape[0]} vs {x_kv.shape[0]}")
        attn = self.attention(x_q, x_kv)
        v = self._split(self.wv(x_kv))
        mixed = (attn @ v).transpose((0, 2, 1, 3))
        g, s, _, _ = mixed.shape
        return x_q + self.wo(mixed.reshape(g, s, self.channels))


class CrossVolumeFusion(nn.Module):
    """Bidirectional grouped cross-attention between the two volumes followed
    by self-attention over their channel concatenation.

    ``tie_cross`` shares one cross-attention block for both directions (a test
    mode making the two outputs symmetric under identical inputs).
    """

    def __init__(self, rng: np.random.Generator, channels: int = 8,
                 groups: int = DEFAULT_GROUPS, heads: int = 4,
                 norm_queries: bool = True, tie_cross: bool = False):
        self.ca_rgb = AttentionBlock(rng, channels, heads, norm_queries)
        self.ca_nor = self.ca_rgb if tie_cross else AttentionBlock(rng, channels, heads, norm_queries)
        self.sa = AttentionBlock(rng, 2 * channels, heads, norm_queries)
        self.groups = groups
        self.channels = channels
        self.tie_cross = tie_cross

    def parameters(self):
        out = super().parameters()
        if self.tie_cross:
            out = {k: v for k, v in out.items() if not k.startswith("ca_nor.")}
        return out

    def __call__(self, v_rgb: FeatureVolume, v_nor: FeatureVolume) -> FeatureVolume:
        if v_rgb.data.shape != v_nor.data.shape:
            raise ShapeError(f"volume extents differ: {v_rgb.data.shape} vs {v_nor.data.shape}")
        r = unfold_groups(v_rgb.rows(), self.groups)
        n = unfold_groups(v_nor.rows(), self.groups)
        r2 = self.ca_rgb(r, n)
        n2 = self.ca_nor(n, r)
        cat = T.concat([r2, n2], axis=-1)
        fused = self.sa(cat, cat)
        return FeatureVolume(rows_to_grid(fold_groups(fused), v_rgb.resolution),
                             v_rgb.resolution)
