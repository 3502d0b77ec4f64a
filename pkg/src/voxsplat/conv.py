"""Convolution operations on the autodiff tape.

``conv3d`` accepts an unbatched (C, D, H, W) volume or a batched 5-D input;
``conv2d`` accepts (B, C, H, W) or unbatched (C, H, W).  Both use
cross-correlation semantics and validate geometry up front:
output extent = floor((n + 2*pad - k) / stride) + 1, which must be >= 1.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor, _accumulate, _make


def _check_geometry(spatial, kernel, stride, pad, opname):
    if stride < 1 or pad < 0:
        raise ShapeError(f"{opname}: stride must be >=1 and padding >=0, got stride={stride}, padding={pad}")
    for n, k in zip(spatial, kernel):
        if n + 2 * pad < k:
            raise ShapeError(
                f"{opname}: spatial extents {tuple(spatial)} smaller than kernel {tuple(kernel)} after padding {pad}"
            )


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0,
           backend: str | None = None) -> Tensor:
    """3-D cross-correlation: x (C,D,H,W) or (B,C,D,H,W) with w (O,C,kd,kh,kw)."""
    squeeze = x.ndim == 4
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 5 or w.ndim != 5:
        raise ShapeError(f"conv3d: expected 4/5-D input and 5-D kernel, got {x.shape} and {w.shape}")
    if xd.shape[1] != w.shape[1]:
        raise ShapeError(f"conv3d: input channels {xd.shape[1]} != kernel channels {w.shape[1]}")
    _check_geometry(xd.shape[2:], w.shape[2:], stride, padding, "conv3d")

    out = kernels.conv3d_forward(xd, w.data, stride, padding, backend=backend)

    def backward(g):
        gb = g[None] if squeeze else g
        dx, dw = kernels.conv3d_backward(xd, w.data, np.ascontiguousarray(gb), stride, padding, backend=backend)
        _accumulate(x, dx[0] if squeeze else dx)
        _accumulate(w, dw)

    y = _make(out[0] if squeeze else out, (x, w), backward, "conv3d")
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv3d: bias shape {b.shape} != ({w.shape[0]},)")
        bshape = (w.shape[0], 1, 1, 1) if squeeze else (1, w.shape[0], 1, 1, 1)
        y = y + b.reshape(bshape)
    return y


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0,
           backend: str | None = None) -> Tensor:
    """2-D cross-correlation: x (C,H,W) or (B,C,H,W) with w (O,C,kh,kw)."""
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 3/4-D input and 4-D kernel, got {x.shape} and {w.shape}")
    if xd.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input channels {xd.shape[1]} != kernel channels {w.shape[1]}")
    _check_geometry(xd.shape[2:], w.shape[2:], stride, padding, "conv2d")

    out = kernels.conv2d_forward(xd, w.data, stride, padding, backend=backend)

    def backward(g):
        gb = g[None] if squeeze else g
        dx, dw = kernels.conv2d_backward(xd, w.data, np.ascontiguousarray(gb), stride, padding, backend=backend)
        _accumulate(x, dx[0] if squeeze else dx)
        _accumulate(w, dw)

    y = _make(out[0] if squeeze else out, (x, w), backward, "conv2d")
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv2d: bias shape {b.shape} != ({w.shape[0]},)")
        bshape = (w.shape[0], 1, 1) if squeeze else (1, w.shape[0], 1, 1)
        y = y + b.reshape(bshape)
    return y
