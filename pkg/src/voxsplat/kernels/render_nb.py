"""Tile-binned rendering path.

Splats are conservatively binned to 16x16-pixel tiles via the screen-space
projection of a bounding sphere (cutoff radius times the larger scale). Each
tile processes only its own list; per-pixel hit sorting and compositing use
the same rules and thresholds as the all-splats path, so outputs match it.
Backward accumulates per-tile-entry partial gradients reduced serially in a
fixed order, making results independent of thread scheduling.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .render_common import (
    A_MAX, DENOM_EPS, N_CHANNELS, R2_MAX, RAY_T_MIN, SH_C0, SH_C1, T_STOP,
)

TILE = 16
_RHO = float(np.sqrt(R2_MAX))
_NEAR_EPS = 1e-6
_GRAD_COLS = 27  # center 3, tu 3, tv 3, nrm 3, su, sv, alpha, sh 12


def _bin_tiles(inputs):
    """Conservative splat-to-tile lists: CSR offsets plus per-entry splat ids,
    each tile's entries in ascending splat order."""
    dirs = inputs["dirs"]
    h, w, _ = dirs.shape
    ntx = (w + TILE - 1) // TILE
    nty = (h + TILE - 1) // TILE
    centers = inputs["centers"]
    scales = inputs["scales"]
    n = centers.shape[0]

    cc = (centers - inputs["origin"]) @ inputs["rot"]
    radius = _RHO * scales.max(axis=1)
    cz = cc[:, 2]
    behind = cz + radius <= _NEAR_EPS
    everywhere = ~behind & (cz - radius <= _NEAR_EPS)
    bounded = ~behind & ~everywhere

    tx0 = np.zeros(n, dtype=np.int64)
    tx1 = np.full(n, ntx - 1, dtype=np.int64)
    ty0 = np.zeros(n, dtype=np.int64)
    ty1 = np.full(n, nty - 1, dtype=np.int64)
    if bounded.any():
        fx, fy, cx0, cy0 = (float(inputs[k]) for k in ("fx", "fy", "cx", "cy"))
        px = cc[bounded, 0:1] + radius[bounded, None] * np.array([-1.0, 1.0])
        py = cc[bounded, 1:2] + radius[bounded, None] * np.array([-1.0, 1.0])
        pz = cz[bounded, None] + radius[bounded, None] * np.array([-1.0, 1.0])
        u = fx * px[:, :, None] / pz[:, None, :] + cx0  # all corner combos
        v = fy * py[:, :, None] / pz[:, None, :] + cy0
        tx0[bounded] = np.clip((np.floor(u.min(axis=(1, 2))) - 1).astype(np.int64) // TILE, 0, ntx - 1)
        tx1[bounded] = np.clip((np.ceil(u.max(axis=(1, 2))) + 1).astype(np.int64) // TILE, 0, ntx - 1)
        ty0[bounded] = np.clip((np.floor(v.min(axis=(1, 2))) - 1).astype(np.int64) // TILE, 0, nty - 1)
        ty1[bounded] = np.clip((np.ceil(v.max(axis=(1, 2))) + 1).astype(np.int64) // TILE, 0, nty - 1)

    alive = ~behind
    cw = np.where(alive, tx1 - tx0 + 1, 0)
    ch = np.where(alive, ty1 - ty0 + 1, 0)
    counts = cw * ch
    total = int(counts.sum())
    sid = np.repeat(np.arange(n, dtype=np.int64), counts)
    offs = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total, dtype=np.int64) - offs
    cw_rep = cw[sid]
    tilex = tx0[sid] + local % np.maximum(cw_rep, 1)
    tiley = ty0[sid] + local // np.maximum(cw_rep, 1)
    tile_id = tiley * ntx + tilex

    order = np.lexsort((sid, tile_id))
    tile_sid = sid[order]
    tile_counts = np.bincount(tile_id, minlength=ntx * nty)
    offsets = np.zeros(ntx * nty + 1, dtype=np.int64)
    np.cumsum(tile_counts, out=offsets[1:])
    return offsets, tile_sid, ntx


@njit(cache=True, parallel=True)
def _forward_kernel(dirs, origin, fwd, rot, centers, tu, tv, nrm, su, sv,
                    alpha, sh, ncam, offsets, tile_sid, ntx, out):
    height, width = dirs.shape[0], dirs.shape[1]
    n_tiles = offsets.shape[0] - 1
    for ti in prange(n_tiles):
        lo, hi = offsets[ti], offsets[ti + 1]
        count = hi - lo
        if count == 0:
            continue
        ty, tx = ti // ntx, ti % ntx
        z_loc = np.empty(count, centers.dtype)
        a_loc = np.empty(count, centers.dtype)
        k_loc = np.empty(count, np.int64)
        for py in range(ty * TILE, min((ty + 1) * TILE, height)):
            for px in range(tx * TILE, min((tx + 1) * TILE, width)):
                dx, dy, dz = dirs[py, px, 0], dirs[py, px, 1], dirs[py, px, 2]
                df = dx * fwd[0] + dy * fwd[1] + dz * fwd[2]
                b1, b2, b3 = -SH_C1 * dy, SH_C1 * dz, -SH_C1 * dx
                n_hit = 0
                for e in range(count):
                    k = tile_sid[lo + e]
                    denom = dx * nrm[k, 0] + dy * nrm[k, 1] + dz * nrm[k, 2]
                    if abs(denom) <= DENOM_EPS:
                        continue
                    mx = centers[k, 0] - origin[0]
                    my = centers[k, 1] - origin[1]
                    mz = centers[k, 2] - origin[2]
                    t = (mx * nrm[k, 0] + my * nrm[k, 1] + mz * nrm[k, 2]) / denom
                    if t <= RAY_T_MIN:
                        continue
                    qx, qy, qz = t * dx - mx, t * dy - my, t * dz - mz
                    uu = (qx * tu[k, 0] + qy * tu[k, 1] + qz * tu[k, 2]) / su[k]
                    vv = (qx * tv[k, 0] + qy * tv[k, 1] + qz * tv[k, 2]) / sv[k]
                    r2 = uu * uu + vv * vv
                    if r2 > R2_MAX:
                        continue
                    a = alpha[k] * np.exp(-0.5 * r2)
                    if a > A_MAX:
                        a = A_MAX
                    z_loc[n_hit] = t * df
                    a_loc[n_hit] = a
                    k_loc[n_hit] = k
                    n_hit += 1
                # stable sort on z; collection order already ascends splat id
                ord_loc = np.argsort(z_loc[:n_hit], kind="mergesort")
                trans = 1.0
                c0 = c1 = c2 = acc_a = acc_z = 0.0
                n0 = n1 = n2 = dist = a_run = b_run = 0.0
                for s in range(n_hit):
                    if trans < T_STOP:
                        break
                    e = ord_loc[s]
                    a = a_loc[e]
                    om = a * trans
                    z = z_loc[e]
                    k = k_loc[e]
                    c0 += om * (SH_C0 * sh[k, 0] + b1 * sh[k, 3] + b2 * sh[k, 6] + b3 * sh[k, 9] + 0.5)
                    c1 += om * (SH_C0 * sh[k, 1] + b1 * sh[k, 4] + b2 * sh[k, 7] + b3 * sh[k, 10] + 0.5)
                    c2 += om * (SH_C0 * sh[k, 2] + b1 * sh[k, 5] + b2 * sh[k, 8] + b3 * sh[k, 11] + 0.5)
                    acc_a += om
                    acc_z += om * z
                    denom = dx * nrm[k, 0] + dy * nrm[k, 1] + dz * nrm[k, 2]
                    s_flip = 1.0 if denom < 0.0 else -1.0
                    n0 += om * s_flip * ncam[k, 0]
                    n1 += om * s_flip * ncam[k, 1]
                    n2 += om * s_flip * ncam[k, 2]
                    dist += 2.0 * om * (z * a_run - b_run)
                    a_run += om
                    b_run += om * z
                    trans *= 1.0 - a
                out[py, px, 0] = c0
                out[py, px, 1] = c1
                out[py, px, 2] = c2
                out[py, px, 3] = acc_a
                out[py, px, 4] = acc_z
                out[py, px, 5] = n0
                out[py, px, 6] = n1
                out[py, px, 7] = n2
                out[py, px, 8] = dist


@njit(cache=True, parallel=True)
def _backward_kernel(dirs, origin, fwd, rot, centers, tu, tv, nrm, su, sv,
                     alpha, sh, ncam, offsets, tile_sid, ntx, g_out, buf):
    height, width = dirs.shape[0], dirs.shape[1]
    n_tiles = offsets.shape[0] - 1
    for ti in prange(n_tiles):
        lo, hi = offsets[ti], offsets[ti + 1]
        count = hi - lo
        if count == 0:
            continue
        ty, tx = ti // ntx, ti % ntx
        z_loc = np.empty(count, centers.dtype)
        a_loc = np.empty(count, centers.dtype)
        g_loc = np.empty(count, centers.dtype)
        u_loc = np.empty(count, centers.dtype)
        v_loc = np.empty(count, centers.dtype)
        t_loc = np.empty(count, centers.dtype)
        dn_loc = np.empty(count, centers.dtype)
        k_loc = np.empty(count, np.int64)
        e_loc = np.empty(count, np.int64)
        om_loc = np.empty(count, centers.dtype)
        te_loc = np.empty(count, centers.dtype)
        ae_loc = np.empty(count, centers.dtype)
        be_loc = np.empty(count, centers.dtype)
        gw_loc = np.empty(count, centers.dtype)
        col_loc = np.empty((count, 3), centers.dtype)
        for py in range(ty * TILE, min((ty + 1) * TILE, height)):
            for px in range(tx * TILE, min((tx + 1) * TILE, width)):
                dx, dy, dz = dirs[py, px, 0], dirs[py, px, 1], dirs[py, px, 2]
                df = dx * fwd[0] + dy * fwd[1] + dz * fwd[2]
                b1, b2, b3 = -SH_C1 * dy, SH_C1 * dz, -SH_C1 * dx
                n_hit = 0
                for e in range(count):
                    k = tile_sid[lo + e]
                    denom = dx * nrm[k, 0] + dy * nrm[k, 1] + dz * nrm[k, 2]
                    if abs(denom) <= DENOM_EPS:
                        continue
                    mx = centers[k, 0] - origin[0]
                    my = centers[k, 1] - origin[1]
                    mz = centers[k, 2] - origin[2]
                    t = (mx * nrm[k, 0] + my * nrm[k, 1] + mz * nrm[k, 2]) / denom
                    if t <= RAY_T_MIN:
                        continue
                    qx, qy, qz = t * dx - mx, t * dy - my, t * dz - mz
                    uu = (qx * tu[k, 0] + qy * tu[k, 1] + qz * tu[k, 2]) / su[k]
                    vv = (qx * tv[k, 0] + qy * tv[k, 1] + qz * tv[k, 2]) / sv[k]
                    r2 = uu * uu + vv * vv
                    if r2 > R2_MAX:
                        continue
                    g = np.exp(-0.5 * r2)
                    a = alpha[k] * g
                    if a > A_MAX:
                        a = A_MAX
                    z_loc[n_hit] = t * df
                    a_loc[n_hit] = a
                    g_loc[n_hit] = g
                    u_loc[n_hit] = uu
                    v_loc[n_hit] = vv
                    t_loc[n_hit] = t
                    dn_loc[n_hit] = denom
                    k_loc[n_hit] = k
                    e_loc[n_hit] = e
                    n_hit += 1
                # stable sort on z; collection order already ascends splat id
                ord_loc = np.argsort(z_loc[:n_hit], kind="mergesort")
                # forward replay in depth order: weights, transmittance, prefixes
                trans = 1.0
                a_run = b_run = 0.0
                n_live = 0
                for s in range(n_hit):
                    if trans < T_STOP:
                        break
                    e = ord_loc[s]
                    om = a_loc[e] * trans
                    om_loc[s] = om
                    te_loc[s] = trans
                    ae_loc[s] = a_run
                    be_loc[s] = b_run
                    k = k_loc[e]
                    col_loc[s, 0] = SH_C0 * sh[k, 0] + b1 * sh[k, 3] + b2 * sh[k, 6] + b3 * sh[k, 9] + 0.5
                    col_loc[s, 1] = SH_C0 * sh[k, 1] + b1 * sh[k, 4] + b2 * sh[k, 7] + b3 * sh[k, 10] + 0.5
                    col_loc[s, 2] = SH_C0 * sh[k, 2] + b1 * sh[k, 5] + b2 * sh[k, 8] + b3 * sh[k, 11] + 0.5
                    a_run += om
                    b_run += om * z_loc[e]
                    trans *= 1.0 - a_loc[e]
                    n_live += 1
                a_tot, b_tot = a_run, b_run
                gc0, gc1, gc2 = g_out[py, px, 0], g_out[py, px, 1], g_out[py, px, 2]
                g_a = g_out[py, px, 3]
                g_z = g_out[py, px, 4]
                gn0, gn1, gn2 = g_out[py, px, 5], g_out[py, px, 6], g_out[py, px, 7]
                g_d = g_out[py, px, 8]
                rdn0 = rot[0, 0] * gn0 + rot[0, 1] * gn1 + rot[0, 2] * gn2
                rdn1 = rot[1, 0] * gn0 + rot[1, 1] * gn1 + rot[1, 2] * gn2
                rdn2 = rot[2, 0] * gn0 + rot[2, 1] * gn1 + rot[2, 2] * gn2
                a_inc = b_inc = 0.0
                for s in range(n_live):
                    e = ord_loc[s]
                    k = k_loc[e]
                    om = om_loc[s]
                    z = z_loc[e]
                    a_inc = ae_loc[s] + om
                    b_inc = be_loc[s] + om * z
                    denom = dn_loc[e]
                    s_flip = 1.0 if denom < 0.0 else -1.0
                    dd = 2.0 * (z * ae_loc[s] - be_loc[s] + (b_tot - b_inc) - z * (a_tot - a_inc))
                    gw_loc[s] = (gc0 * col_loc[s, 0] + gc1 * col_loc[s, 1] + gc2 * col_loc[s, 2]
                                 + g_a + g_z * z
                                 + s_flip * (gn0 * ncam[k, 0] + gn1 * ncam[k, 1] + gn2 * ncam[k, 2])
                                 + g_d * dd)
                suffix = 0.0
                a_inc = a_tot
                for s in range(n_live - 1, -1, -1):
                    e = ord_loc[s]
                    k = k_loc[e]
                    om = om_loc[s]
                    ga_hit = gw_loc[s] * te_loc[s] - suffix / (1.0 - a_loc[e])
                    suffix += gw_loc[s] * om
                    gz_hit = g_z * om + g_d * 2.0 * om * (ae_loc[s] - (a_tot - a_inc))
                    a_inc -= om
                    g = g_loc[e]
                    if alpha[k] * g < A_MAX:
                        g_prod = ga_hit
                    else:
                        g_prod = 0.0
                    row = lo + e_loc[e]
                    buf[row, 14] += g_prod * g
                    g_gauss = g_prod * alpha[k]
                    g_r2 = -0.5 * g * g_gauss
                    gu = 2.0 * u_loc[e] * g_r2
                    gv = 2.0 * v_loc[e] * g_r2
                    t = t_loc[e]
                    mx = centers[k, 0] - origin[0]
                    my = centers[k, 1] - origin[1]
                    mz = centers[k, 2] - origin[2]
                    qx, qy, qz = t * dx - mx, t * dy - my, t * dz - mz
                    gus = gu / su[k]
                    gvs = gv / sv[k]
                    gqx = gus * tu[k, 0] + gvs * tv[k, 0]
                    gqy = gus * tu[k, 1] + gvs * tv[k, 1]
                    gqz = gus * tu[k, 2] + gvs * tv[k, 2]
                    gt = gqx * dx + gqy * dy + gqz * dz + gz_hit * df
                    denom = dn_loc[e]
                    gtd = gt / denom
                    buf[row, 0] += -gqx + gtd * nrm[k, 0]
                    buf[row, 1] += -gqy + gtd * nrm[k, 1]
                    buf[row, 2] += -gqz + gtd * nrm[k, 2]
                    buf[row, 3] += gus * qx
                    buf[row, 4] += gus * qy
                    buf[row, 5] += gus * qz
                    buf[row, 6] += gvs * qx
                    buf[row, 7] += gvs * qy
                    buf[row, 8] += gvs * qz
                    s_flip = 1.0 if denom < 0.0 else -1.0
                    wsn = om * s_flip
                    buf[row, 9] += -gtd * qx + wsn * rdn0
                    buf[row, 10] += -gtd * qy + wsn * rdn1
                    buf[row, 11] += -gtd * qz + wsn * rdn2
                    buf[row, 12] += -gu * u_loc[e] / su[k]
                    buf[row, 13] += -gv * v_loc[e] / sv[k]
                    omc0, omc1, omc2 = om * gc0, om * gc1, om * gc2
                    buf[row, 15] += SH_C0 * omc0
                    buf[row, 16] += SH_C0 * omc1
                    buf[row, 17] += SH_C0 * omc2
                    buf[row, 18] += b1 * omc0
                    buf[row, 19] += b1 * omc1
                    buf[row, 20] += b1 * omc2
                    buf[row, 21] += b2 * omc0
                    buf[row, 22] += b2 * omc1
                    buf[row, 23] += b2 * omc2
                    buf[row, 24] += b3 * omc0
                    buf[row, 25] += b3 * omc1
                    buf[row, 26] += b3 * omc2


@njit(cache=True)
def _reduce(buf, tile_sid, g_centers, g_tu, g_tv, g_nrm, g_scales, g_alpha, g_sh):
    for row in range(buf.shape[0]):
        k = tile_sid[row]
        for c in range(3):
            g_centers[k, c] += buf[row, c]
            g_tu[k, c] += buf[row, 3 + c]
            g_tv[k, c] += buf[row, 6 + c]
            g_nrm[k, c] += buf[row, 9 + c]
        g_scales[k, 0] += buf[row, 12]
        g_scales[k, 1] += buf[row, 13]
        g_alpha[k] += buf[row, 14]
        for c in range(12):
            g_sh[k, c] += buf[row, 15 + c]


def _args(inputs):
    ncam = inputs["nrm"] @ inputs["rot"]
    scales = inputs["scales"]
    return (inputs["dirs"], inputs["origin"], inputs["fwd"], inputs["rot"],
            inputs["centers"], inputs["tu"], inputs["tv"], inputs["nrm"],
            np.ascontiguousarray(scales[:, 0]), np.ascontiguousarray(scales[:, 1]),
            inputs["alpha"], inputs["sh"], ncam)


def render_forward(inputs) -> np.ndarray:
    h, w, _ = inputs["dirs"].shape
    out = np.zeros((h, w, N_CHANNELS), dtype=inputs["centers"].dtype)
    if inputs["centers"].shape[0] == 0:
        return out
    offsets, tile_sid, ntx = _bin_tiles(inputs)
    _forward_kernel(*_args(inputs), offsets, tile_sid, ntx, out)
    return out


def render_backward(inputs, g_out) -> dict[str, np.ndarray]:
    dt = inputs["centers"].dtype
    n = inputs["centers"].shape[0]
    grads = {
        "centers": np.zeros((n, 3), dtype=dt), "tu": np.zeros((n, 3), dtype=dt),
        "tv": np.zeros((n, 3), dtype=dt), "nrm": np.zeros((n, 3), dtype=dt),
        "scales": np.zeros((n, 2), dtype=dt), "alpha": np.zeros(n, dtype=dt),
        "sh": np.zeros_like(inputs["sh"]),
    }
    if n == 0:
        return grads
    offsets, tile_sid, ntx = _bin_tiles(inputs)
    buf = np.zeros((tile_sid.shape[0], _GRAD_COLS), dtype=dt)
    _backward_kernel(*_args(inputs), offsets, tile_sid, ntx,
                     np.ascontiguousarray(g_out, dtype=dt), buf)
    _reduce(buf, tile_sid, grads["centers"], grads["tu"], grads["tv"],
            grads["nrm"], grads["scales"], grads["alpha"], grads["sh"])
    return grads
