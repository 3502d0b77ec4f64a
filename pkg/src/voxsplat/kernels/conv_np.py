"""Pure-numpy convolution kernels (im2col / col2im form).

Cross-correlation semantics.  Shapes:
  conv3d: x (B, C, D, H, W), w (O, C, kd, kh, kw) -> (B, O, Do, Ho, Wo)
  conv2d: x (B, C, H, W),    w (O, C, kh, kw)     -> (B, O, Ho, Wo)
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _out_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _pad3(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))


def _pad2(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _cols3(xp, kd, kh, kw, s, do, ho, wo):
    B, C = xp.shape[:2]
    sb, sc, sd, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(B, C, kd, kh, kw, do, ho, wo),
        strides=(sb, sc, sd, sh, sw, sd * s, sh * s, sw * s),
        writeable=False,
    )
    return view.reshape(B, C * kd * kh * kw, do * ho * wo)


def _cols2(xp, kh, kw, s, ho, wo):
    B, C = xp.shape[:2]
    sb, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(B, C, kh, kw, ho, wo),
        strides=(sb, sc, sh, sw, sh * s, sw * s),
        writeable=False,
    )
    return view.reshape(B, C * kh * kw, ho * wo)


def conv3d_forward(x, w, stride, pad):
    B, C, D, H, W = x.shape
    O, _, kd, kh, kw = w.shape
    do, ho, wo = (_out_extent(n, k, stride, pad) for n, k in ((D, kd), (H, kh), (W, kw)))
    xp = _pad3(x, pad)
    cols = _cols3(xp, kd, kh, kw, stride, do, ho, wo)
    out = w.reshape(O, -1) @ cols  # (B, O, P) by broadcasting over B
    return np.ascontiguousarray(out.reshape(B, O, do, ho, wo))


def conv3d_backward(x, w, g, stride, pad):
    B, C, D, H, W = x.shape
    O, _, kd, kh, kw = w.shape
    do, ho, wo = g.shape[2:]
    gm = g.reshape(B, O, -1)
    xp = _pad3(x, pad)
    cols = _cols3(xp, kd, kh, kw, stride, do, ho, wo)

    dw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    dcols = (w.reshape(O, -1).T @ gm).reshape(B, C, kd, kh, kw, do, ho, wo)

    dxp = np.zeros_like(xp)
    for i in range(kd):
        for j in range(kh):
            for k in range(kw):
                dxp[:, :, i : i + do * stride : stride, j : j + ho * stride : stride, k : k + wo * stride : stride] += dcols[:, :, i, j, k]
    dx = dxp if pad == 0 else dxp[:, :, pad:-pad, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dx), dw.astype(w.dtype)


def conv2d_forward(x, w, stride, pad):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    ho, wo = _out_extent(H, kh, stride, pad), _out_extent(W, kw, stride, pad)
    xp = _pad2(x, pad)
    cols = _cols2(xp, kh, kw, stride, ho, wo)
    out = w.reshape(O, -1) @ cols
    return np.ascontiguousarray(out.reshape(B, O, ho, wo))


def conv2d_backward(x, w, g, stride, pad):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    ho, wo = g.shape[2:]
    gm = g.reshape(B, O, -1)
    xp = _pad2(x, pad)
    cols = _cols2(xp, kh, kw, stride, ho, wo)

    dw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    dcols = (w.reshape(O, -1).T @ gm).reshape(B, C, kh, kw, ho, wo)

    dxp = np.zeros_like(xp)
    for j in range(kh):
        for k in range(kw):
            dxp[:, :, j : j + ho * stride : stride, k : k + wo * stride : stride] += dcols[:, :, j, k]
    dx = dxp if pad == 0 else dxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dx), dw.astype(w.dtype)
