"""Numba convolution kernels (direct loops, parallel over output channels).

Gradient accumulation is race-free by construction: dw parallelizes over
output channels, dx over input channels, so every thread owns its slice.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def _c3_fwd(x, w, out, stride, pad):
    B, C, D, H, W = x.shape
    O = w.shape[0]
    kd, kh, kw = w.shape[2], w.shape[3], w.shape[4]
    do, ho, wo = out.shape[2], out.shape[3], out.shape[4]
    for o in prange(O):
        for b in range(B):
            for zo in range(do):
                for yo in range(ho):
                    for xo in range(wo):
                        acc = 0.0
                        for c in range(C):
                            for i in range(kd):
                                zi = zo * stride + i - pad
                                if zi < 0 or zi >= D:
                                    continue
                                for j in range(kh):
                                    yi = yo * stride + j - pad
                                    if yi < 0 or yi >= H:
                                        continue
                                    for k in range(kw):
                                        xi = xo * stride + k - pad
                                        if xi < 0 or xi >= W:
                                            continue
                                        acc += x[b, c, zi, yi, xi] * w[o, c, i, j, k]
                        out[b, o, zo, yo, xo] = acc


@njit(cache=True, parallel=True)
def _c3_bwd_w(x, g, dw, stride, pad):
    B, C, D, H, W = x.shape
    O = dw.shape[0]
    kd, kh, kw = dw.shape[2], dw.shape[3], dw.shape[4]
    do, ho, wo = g.shape[2], g.shape[3], g.shape[4]
    for o in prange(O):
        for c in range(C):
            for i in range(kd):
                for j in range(kh):
                    for k in range(kw):
                        acc = 0.0
                        for b in range(B):
                            for zo in range(do):
                                zi = zo * stride + i - pad
                                if zi < 0 or zi >= D:
                                    continue
                                for yo in range(ho):
                                    yi = yo * stride + j - pad
                                    if yi < 0 or yi >= H:
                                        continue
                                    for xo in range(wo):
                                        xi = xo * stride + k - pad
                                        if xi < 0 or xi >= W:
                                            continue
                                        acc += x[b, c, zi, yi, xi] * g[b, o, zo, yo, xo]
                        dw[o, c, i, j, k] = acc


@njit(cache=True, parallel=True)
def _c3_bwd_x(w, g, dx, stride, pad):
    B = dx.shape[0]
    C, D, H, W = dx.shape[1], dx.shape[2], dx.shape[3], dx.shape[4]
    O = w.shape[0]
    kd, kh, kw = w.shape[2], w.shape[3], w.shape[4]
    do, ho, wo = g.shape[2], g.shape[3], g.shape[4]
    for c in prange(C):
        for b in range(B):
            for o in range(O):
                for zo in range(do):
                    for yo in range(ho):
                        for xo in range(wo):
                            gv = g[b, o, zo, yo, xo]
                            if gv == 0.0:
                                continue
                            for i in range(kd):
                                zi = zo * stride + i - pad
                                if zi < 0 or zi >= D:
                                    continue
                                for j in range(kh):
                                    yi = yo * stride + j - pad
                                    if yi < 0 or yi >= H:
                                        continue
                                    for k in range(kw):
                                        xi = xo * stride + k - pad
                                        if xi < 0 or xi >= W:
                                            continue
                                        dx[b, c, zi, yi, xi] += gv * w[o, c, i, j, k]


def conv3d_forward(x, w, stride, pad):
    B, C, D, H, W = x.shape
    O, _, kd, kh, kw = w.shape
    do = (D + 2 * pad - kd) // stride + 1
    ho = (H + 2 * pad - kh) // stride + 1
    wo = (W + 2 * pad - kw) // stride + 1
    out = np.empty((B, O, do, ho, wo), dtype=x.dtype)
    _c3_fwd(x, w, out, stride, pad)
    return out


def conv3d_backward(x, w, g, stride, pad):
    dw = np.empty_like(w)
    dx = np.zeros_like(x)
    _c3_bwd_w(x, g, dw, stride, pad)
    _c3_bwd_x(w, g, dx, stride, pad)
    return dx, dw


@njit(cache=True, parallel=True)
def _c2_fwd(x, w, out, stride, pad):
    B, C, H, W = x.shape
    O = w.shape[0]
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = out.shape[2], out.shape[3]
    for o in prange(O):
        for b in range(B):
            for yo in range(ho):
                for xo in range(wo):
                    acc = 0.0
                    for c in range(C):
                        for j in range(kh):
                            yi = yo * stride + j - pad
                            if yi < 0 or yi >= H:
                                continue
                            for k in range(kw):
                                xi = xo * stride + k - pad
                                if xi < 0 or xi >= W:
                                    continue
                                acc += x[b, c, yi, xi] * w[o, c, j, k]
                    out[b, o, yo, xo] = acc


@njit(cache=True, parallel=True)
def _c2_bwd_w(x, g, dw, stride, pad):
    B, C, H, W = x.shape
    O = dw.shape[0]
    kh, kw = dw.shape[2], dw.shape[3]
    ho, wo = g.shape[2], g.shape[3]
    for o in prange(O):
        for c in range(C):
            for j in range(kh):
                for k in range(kw):
                    acc = 0.0
                    for b in range(B):
                        for yo in range(ho):
                            yi = yo * stride + j - pad
                            if yi < 0 or yi >= H:
                                continue
                            for xo in range(wo):
                                xi = xo * stride + k - pad
                                if xi < 0 or xi >= W:
                                    continue
                                acc += x[b, c, yi, xi] * g[b, o, yo, xo]
                    dw[o, c, j, k] = acc


@njit(cache=True, parallel=True)
def _c2_bwd_x(w, g, dx, stride, pad):
    B = dx.shape[0]
    C, H, W = dx.shape[1], dx.shape[2], dx.shape[3]
    O = w.shape[0]
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = g.shape[2], g.shape[3]
    for c in prange(C):
        for b in range(B):
            for o in range(O):
                for yo in range(ho):
                    for xo in range(wo):
                        gv = g[b, o, yo, xo]
                        if gv == 0.0:
                            continue
                        for j in range(kh):
                            yi = yo * stride + j - pad
                            if yi < 0 or yi >= H:
                                continue
                            for k in range(kw):
                                xi = xo * stride + k - pad
                                if xi < 0 or xi >= W:
                                    continue
                                dx[b, c, yi, xi] += gv * w[o, c, j, k]


def conv2d_forward(x, w, stride, pad):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    ho = (H + 2 * pad - kh) // stride + 1
    wo = (W + 2 * pad - kw) // stride + 1
    out = np.empty((B, O, ho, wo), dtype=x.dtype)
    _c2_fwd(x, w, out, stride, pad)
    return out


def conv2d_backward(x, w, g, stride, pad):
    dw = np.empty_like(w)
    dx = np.zeros_like(x)
    _c2_bwd_w(x, g, dw, stride, pad)
    _c2_bwd_x(w, g, dx, stride, pad)
    return dx, dw
