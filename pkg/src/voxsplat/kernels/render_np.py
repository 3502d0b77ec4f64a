"""Vectorized all-splats-per-ray rendering path.

Every ray tests every splat, sorts its hits by depth, and composites front to
back. This is the correctness oracle for the tiled path and the fallback
backend; it is exact but O(pixels x splats).
"""

from __future__ import annotations

import numpy as np

from .render_common import (
    A_MAX, DENOM_EPS, N_CHANNELS, R2_MAX, RAY_T_MIN, T_STOP, sh_basis,
)

# pixel-chunk sizing keeps the (pixels x splats) temporaries bounded
_CHUNK_CELLS = 1 << 19


def _chunk_rows(n_px: int, n_splats: int) -> int:
    return max(1, _CHUNK_CELLS // max(n_splats, 1))


def _composite_state(origin, dirs, fwd, rot, centers, tu, tv, nrm, su, sv,
                     alpha, sh):
    """All per-(pixel, splat) quantities in per-pixel depth order.

    ``dirs`` is (n, 3) unit directions for one chunk of pixels. Arrays in the
    returned dict are (n, P) or (n, P, 3), sorted along the splat axis by
    (intersection z, splat index).
    """
    n = dirs.shape[0]
    m = centers - origin  # (P,3)
    denom = dirs @ nrm.T  # (n,P)
    mn = (m * nrm).sum(axis=1)  # (P,)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = mn[None, :] / denom
    q = t[..., None] * dirs[:, None, :] - m[None, :, :]  # hit minus center
    u = np.einsum("npc,pc->np", q, tu) / su[None, :]
    v = np.einsum("npc,pc->np", q, tv) / sv[None, :]
    r2 = u * u + v * v
    valid = (np.abs(denom) > DENOM_EPS) & (t > RAY_T_MIN) & (r2 <= R2_MAX)
    df = dirs @ fwd  # (n,)
    z = t * df[:, None]

    order = np.argsort(np.where(valid, z, np.inf), axis=1, kind="stable")

    def take(arr):
        return np.take_along_axis(arr, order, axis=1)

    valid_s = take(valid)
    z_s = np.where(valid_s, take(z), 0.0)
    g_full = np.where(valid, np.exp(np.minimum(-0.5 * r2, 0.0)), 0.0)
    g_s = take(g_full)
    a_s = np.minimum(alpha[order] * g_s, A_MAX)
    one_minus = 1.0 - a_s
    t_excl = np.cumprod(one_minus, axis=1)
    t_excl = np.concatenate([np.ones((n, 1), dtype=a_s.dtype), t_excl[:, :-1]], axis=1)
    include = t_excl >= T_STOP
    omega = np.where(include, a_s * t_excl, 0.0)

    basis = sh_basis(dirs)  # (n,4)
    colors = np.einsum("nj,pjc->npc", basis, sh.reshape(-1, 4, 3)) + 0.5
    colors_s = np.take_along_axis(colors, order[..., None], axis=1)
    n_cam = nrm @ rot  # (P,3) camera-frame normals
    sflip_s = np.where(take(denom) < 0.0, 1.0, -1.0)

    return {
        "order": order, "valid": valid_s, "include": include, "z": z_s,
        "t": take(t), "u": take(u), "v": take(v), "denom": take(denom),
        "g": g_s, "a": a_s, "t_excl": t_excl, "omega": omega,
        "colors": colors_s, "sflip": sflip_s, "n_cam": n_cam, "basis": basis,
        "df": df, "dirs": dirs,
    }


def _forward_from_state(st) -> np.ndarray:
    omega, z = st["omega"], st["z"]
    out = np.empty((omega.shape[0], N_CHANNELS), dtype=omega.dtype)
    out[:, 0:3] = (omega[..., None] * st["colors"]).sum(axis=1)
    out[:, 3] = omega.sum(axis=1)
    out[:, 4] = (omega * z).sum(axis=1)
    n_eff = st["sflip"][..., None] * st["n_cam"][st["order"]]
    out[:, 5:8] = (omega[..., None] * n_eff).sum(axis=1)
    a_excl = np.cumsum(omega, axis=1) - omega
    b_excl = np.cumsum(omega * z, axis=1) - omega * z
    out[:, 8] = (2.0 * omega * (z * a_excl - b_excl)).sum(axis=1)
    return out


def _iter_chunks(inputs):
    dirs = inputs["dirs"]
    h, w, _ = dirs.shape
    flat = dirs.reshape(-1, 3)
    n_splats = inputs["centers"].shape[0]
    step = _chunk_rows(h * w, n_splats)
    for lo in range(0, h * w, step):
        yield lo, flat[lo:lo + step]


def _unpack(inputs):
    scales = inputs["scales"]
    return (inputs["origin"], inputs["fwd"], inputs["rot"], inputs["centers"],
            inputs["tu"], inputs["tv"], inputs["nrm"], scales[:, 0], scales[:, 1],
            inputs["alpha"], inputs["sh"])


def render_forward(inputs) -> np.ndarray:
    origin, fwd, rot, centers, tu, tv, nrm, su, sv, alpha, sh = _unpack(inputs)
    h, w, _ = inputs["dirs"].shape
    out = np.zeros((h * w, N_CHANNELS), dtype=centers.dtype)
    if centers.shape[0] == 0:
        return out.reshape(h, w, N_CHANNELS)
    for lo, dirs in _iter_chunks(inputs):
        st = _composite_state(origin, dirs, fwd, rot, centers, tu, tv, nrm,
                              su, sv, alpha, sh)
        out[lo:lo + dirs.shape[0]] = _forward_from_state(st)
    return out.reshape(h, w, N_CHANNELS)


def render_backward(inputs, g_out) -> dict[str, np.ndarray]:
    origin, fwd, rot, centers, tu, tv, nrm, su, sv, alpha, sh = _unpack(inputs)
    n_splats = centers.shape[0]
    dt = centers.dtype
    grads = {
        "centers": np.zeros((n_splats, 3), dtype=dt),
        "tu": np.zeros((n_splats, 3), dtype=dt),
        "tv": np.zeros((n_splats, 3), dtype=dt),
        "nrm": np.zeros((n_splats, 3), dtype=dt),
        "scales": np.zeros((n_splats, 2), dtype=dt),
        "alpha": np.zeros(n_splats, dtype=dt),
        "sh": np.zeros_like(sh),
    }
    if n_splats == 0:
        return grads
    g_flat = g_out.reshape(-1, N_CHANNELS)
    gsh3 = grads["sh"].reshape(n_splats, 4, 3)

    for lo, dirs in _iter_chunks(inputs):
        st = _composite_state(origin, dirs, fwd, rot, centers, tu, tv, nrm,
                              su, sv, alpha, sh)
        g = g_flat[lo:lo + dirs.shape[0]]
        d_c, d_a, d_z, d_n, d_d = g[:, 0:3], g[:, 3], g[:, 4], g[:, 5:8], g[:, 8]

        omega, z, a_s = st["omega"], st["z"], st["a"]
        a_incl = np.cumsum(omega, axis=1)
        b_incl = np.cumsum(omega * z, axis=1)
        a_tot, b_tot = a_incl[:, -1:], b_incl[:, -1:]
        a_excl, b_excl = a_incl - omega, b_incl - omega * z

        n_eff = st["sflip"][..., None] * st["n_cam"][st["order"]]
        dd_domega = 2.0 * (z * a_excl - b_excl + (b_tot - b_incl) - z * (a_tot - a_incl))
        g_omega = ((d_c[:, None, :] * st["colors"]).sum(axis=2) + d_a[:, None]
                   + d_z[:, None] * z + (d_n[:, None, :] * n_eff).sum(axis=2)
                   + d_d[:, None] * dd_domega)

        live = st["valid"] & st["include"]
        go = np.where(live, g_omega * omega, 0.0)
        suffix = go[:, ::-1].cumsum(axis=1)[:, ::-1] - go
        g_a = np.where(live, g_omega * st["t_excl"] - suffix / (1.0 - a_s), 0.0)
        g_z = np.where(live, d_z[:, None] * omega
                       + d_d[:, None] * 2.0 * omega * (a_excl - (a_tot - a_incl)), 0.0)

        unclamped = alpha[st["order"]] * st["g"] < A_MAX
        g_prod = np.where(unclamped, g_a, 0.0)
        g_alpha_hit = g_prod * st["g"]
        g_g = g_prod * alpha[st["order"]]
        g_r2 = -0.5 * st["g"] * g_g
        g_u = 2.0 * st["u"] * g_r2
        g_v = 2.0 * st["v"] * g_r2

        px, pos = np.nonzero(live)
        sid = st["order"][px, pos]
        d_px = dirs[px]
        su_h, sv_h = su[sid], sv[sid]
        u_h, v_h = st["u"][px, pos], st["v"][px, pos]
        t_h, denom_h = st["t"][px, pos], st["denom"][px, pos]
        q_h = t_h[:, None] * d_px - (centers[sid] - origin)
        gu_h, gv_h = g_u[px, pos], g_v[px, pos]
        g_q = (gu_h / su_h)[:, None] * tu[sid] + (gv_h / sv_h)[:, None] * tv[sid]
        g_t = (g_q * d_px).sum(axis=1) + g_z[px, pos] * st["df"][px]
        g_m = -g_q + (g_t / denom_h)[:, None] * nrm[sid]
        om_h = omega[px, pos]
        g_n_hit = (-g_t / denom_h)[:, None] * q_h \
            + (om_h * st["sflip"][px, pos])[:, None] * (d_n[px] @ rot.T)

        np.add.at(grads["centers"], sid, g_m)
        np.add.at(grads["tu"], sid, (gu_h / su_h)[:, None] * q_h)
        np.add.at(grads["tv"], sid, (gv_h / sv_h)[:, None] * q_h)
        np.add.at(grads["nrm"], sid, g_n_hit)
        np.add.at(grads["scales"][:, 0], sid, -gu_h * u_h / su_h)
        np.add.at(grads["scales"][:, 1], sid, -gv_h * v_h / sv_h)
        np.add.at(grads["alpha"], sid, g_alpha_hit[px, pos])
        np.add.at(gsh3, sid,
                  om_h[:, None, None] * st["basis"][px][:, :, None] * d_c[px][:, None, :])
    return grads


def render_records(inputs):
    """Per-pixel blending records in composite order: CSR ``offsets`` over
    pixels plus flat ``splat``, ``omega``, ``z``, and viewer-facing
    camera-frame ``normal`` arrays."""
    origin, fwd, rot, centers, tu, tv, nrm, su, sv, alpha, sh = _unpack(inputs)
    h, w, _ = inputs["dirs"].shape
    counts = np.zeros(h * w, dtype=np.int64)
    splat_parts, omega_parts, z_parts, nrm_parts = [], [], [], []
    if centers.shape[0] > 0:
        for lo, dirs in _iter_chunks(inputs):
            st = _composite_state(origin, dirs, fwd, rot, centers, tu, tv, nrm,
                                  su, sv, alpha, sh)
            live = st["valid"] & st["include"] & (st["omega"] > 0.0)
            counts[lo:lo + dirs.shape[0]] = live.sum(axis=1)
            px, pos = np.nonzero(live)
            splat_parts.append(st["order"][px, pos])
            omega_parts.append(st["omega"][px, pos])
            z_parts.append(st["z"][px, pos])
            n_eff = st["sflip"][px, pos, None] * st["n_cam"][st["order"][px, pos]]
            nrm_parts.append(n_eff)
    offsets = np.zeros(h * w + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    cat = lambda parts, shape, dt: (np.concatenate(parts) if parts
                                    else np.zeros(shape, dtype=dt))
    return {
        "offsets": offsets,
        "splat": cat(splat_parts, (0,), np.int64),
        "omega": cat(omega_parts, (0,), centers.dtype),
        "z": cat(z_parts, (0,), centers.dtype),
        "normal": cat(nrm_parts, (0, 3), centers.dtype),
    }
