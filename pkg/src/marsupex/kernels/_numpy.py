"""Vectorized numpy versions of the loop kernels.

Each function takes the same arguments as its counterpart in ``_numba.py``
and performs the same floating point operations, batched over rays or
segments instead of looped.  ``gain`` ignores the clearance field and
walks every voxel.
"""
from __future__ import annotations

import math

import numpy as np

UNKNOWN = 0
FREE = 1
OCCUPIED = 2


def _setup(p, o, i, u, res):
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.sign(u).astype(np.int64)
        tmax = np.where(u > 0.0, ((i + 1) * res + o - p) / u,
                        np.where(u < 0.0, (i * res + o - p) / u, np.inf))
        tdelta = np.where(u > 0.0, res / u, np.where(u < 0.0, -res / u, np.inf))
    return step, tmax, tdelta


def _advance(rows, idx, tmax, tdelta, step, t):
    tx, ty, tz = tmax[rows, 0], tmax[rows, 1], tmax[rows, 2]
    axis = np.where(tx < ty, np.where(tx < tz, 0, 2), np.where(ty < tz, 1, 2))
    t[rows] = tmax[rows, axis]
    idx[rows, axis] += step[rows, axis]
    tmax[rows, axis] += tdelta[rows, axis]


def _in_grid(idx, shape):
    return ((idx >= 0) & (idx < np.asarray(shape))).all(axis=1)


def _start(origin, res, pos, dirs):
    pos = np.asarray(pos, dtype=float)
    origin = np.asarray(origin, dtype=float)
    i0 = np.floor((pos - origin) / res).astype(np.int64)
    n = dirs.shape[0]
    step, tmax, tdelta = _setup(pos[None, :], origin[None, :], i0[None, :], dirs, res)
    idx = np.tile(i0, (n, 1))
    return idx, step, tmax, tdelta


def raycast(cells, origin, res, pos, dirs, max_range):
    dirs = np.asarray(dirs, dtype=float)
    n = dirs.shape[0]
    idx, step, tmax, tdelta = _start(origin, res, pos, dirs)
    t = np.zeros(n)
    hit = np.zeros(n, dtype=bool)
    vox = np.full((n, 3), -1, dtype=np.int64)
    t_hit = np.full(n, np.nan)
    active = np.arange(n)
    while active.size:
        keep = (t[active] <= max_range) & _in_grid(idx[active], cells.shape)
        active = active[keep]
        if not active.size:
            break
        occ = cells[idx[active, 0], idx[active, 1], idx[active, 2]] == OCCUPIED
        done = active[occ]
        hit[done] = True
        vox[done] = idx[done]
        t_hit[done] = t[done]
        active = active[~occ]
        _advance(active, idx, tmax, tdelta, step, t)
    return hit, vox, t_hit


def integrate(cells, origin, res, pos, dirs, hit, vox, max_range):
    dirs = np.asarray(dirs, dtype=float)
    n = dirs.shape[0]
    idx, step, tmax, tdelta = _start(origin, res, pos, dirs)
    t = np.zeros(n)
    limit = np.where(hit, max_range + 2.0 * res, max_range)
    free_marks = []
    occ_marks = []
    active = np.arange(n)
    while active.size:
        keep = (t[active] <= limit[active]) & _in_grid(idx[active], cells.shape)
        active = active[keep]
        if not active.size:
            break
        at_hit = hit[active] & (idx[active] == vox[active]).all(axis=1)
        occ_marks.append(idx[active[at_hit]])
        active = active[~at_hit]
        free_marks.append(idx[active].copy())
        _advance(active, idx, tmax, tdelta, step, t)
    before = cells.copy()
    if free_marks:
        f = np.concatenate(free_marks)
        sel = cells[f[:, 0], f[:, 1], f[:, 2]] == UNKNOWN
        f = f[sel]
        cells[f[:, 0], f[:, 1], f[:, 2]] = FREE
    if occ_marks:
        o = np.concatenate(occ_marks)
        cells[o[:, 0], o[:, 1], o[:, 2]] = OCCUPIED
    return int(np.count_nonzero((before == UNKNOWN) & (cells != UNKNOWN)))


def _visible_many(cells, origin, res, pos, targets):
    """Plain DDA from ``pos`` to each target voxel center, all at once."""
    origin = np.asarray(origin, dtype=float)
    pos = np.asarray(pos, dtype=float)
    n = targets.shape[0]
    centres = origin + (targets + 0.5) * res
    d = centres - pos
    length = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
    visible = np.ones(n, dtype=bool)
    nz = length > 0.0
    u = np.zeros_like(d)
    u[nz] = d[nz] / length[nz, None]
    idx, step, tmax, tdelta = _start(origin, res, pos, u)
    t = np.zeros(n)
    active = np.flatnonzero(nz)
    while active.size:
        inside = _in_grid(idx[active], cells.shape)
        active = active[inside]
        at_target = (idx[active] == targets[active]).all(axis=1)
        active = active[~at_target]
        occ = cells[idx[active, 0], idx[active, 1], idx[active, 2]] == OCCUPIED
        visible[active[occ]] = False
        active = active[~occ]
        _advance(active, idx, tmax, tdelta, step, t)
        active = active[t[active] <= length[active]]
    return visible


def gain(cells, clearance, use_clear, origin, res, pos, cos_yaw, sin_yaw,
         cos_half_h, full_h, tan_half_v, full_v, max_range):
    nx, ny, nz = cells.shape
    origin = np.asarray(origin, dtype=float)
    px, py, pz = float(pos[0]), float(pos[1]), float(pos[2])
    lo = [max(0, int(math.floor((c - max_range - o) / res))) for c, o in zip((px, py, pz), origin)]
    hi = [min(s - 1, int(math.floor((c + max_range - o) / res)))
          for c, o, s in zip((px, py, pz), origin, cells.shape)]
    if any(h < lw for lw, h in zip(lo, hi)):
        return 0
    sub = cells[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
    ii, jj, kk = np.nonzero(sub == UNKNOWN)
    ii = ii + lo[0]
    jj = jj + lo[1]
    kk = kk + lo[2]
    dx = origin[0] + (ii + 0.5) * res - px
    dy = origin[1] + (jj + 0.5) * res - py
    dz = origin[2] + (kk + 0.5) * res - pz
    dxy2 = dx * dx + dy * dy
    r2 = max_range * max_range
    keep = (dxy2 <= r2) & (dxy2 + dz * dz <= r2)
    rxy = np.sqrt(dxy2)
    if not full_h:
        keep &= ~(dx * cos_yaw + dy * sin_yaw < cos_half_h * rxy)
    if not full_v:
        keep &= ~(np.abs(dz) > tan_half_v * rxy)
    targets = np.stack([ii[keep], jj[keep], kk[keep]], axis=1).astype(np.int64)
    if not targets.size:
        return 0
    return int(np.count_nonzero(_visible_many(cells, origin, res, (px, py, pz), targets)))


def gain_many(cells, clearance, use_clear, origin, res, positions, yaws,
              cos_half_h, full_h, tan_half_v, full_v, max_range):
    return np.array([
        gain(cells, clearance, use_clear, origin, res, positions[m], math.cos(yaws[m]),
             math.sin(yaws[m]), cos_half_h, full_h, tan_half_v, full_v, max_range)
        for m in range(len(positions))
    ], dtype=np.int64)


def _blocked(states, unknown_blocks):
    b = states == OCCUPIED
    if unknown_blocks:
        b |= states == UNKNOWN
    return b


def capsule_clear(cells, origin, res, p0, p1, radius, unknown_blocks):
    origin = np.asarray(origin, dtype=float)
    a = np.asarray(p0, dtype=float)
    b = np.asarray(p1, dtype=float)
    e = b - a
    ll = e[0] * e[0] + e[1] * e[1] + e[2] * e[2]
    lo = np.floor((np.minimum(a, b) - radius - origin) / res).astype(np.int64)
    hi = np.floor((np.maximum(a, b) + radius - origin) / res).astype(np.int64)
    ii, jj, kk = np.meshgrid(*(np.arange(l, h + 1) for l, h in zip(lo, hi)), indexing="ij")
    ii, jj, kk = ii.ravel(), jj.ravel(), kk.ravel()
    cx = origin[0] + (ii + 0.5) * res
    cy = origin[1] + (jj + 0.5) * res
    cz = origin[2] + (kk + 0.5) * res
    if ll > 0.0:
        s = ((cx - a[0]) * e[0] + (cy - a[1]) * e[1] + (cz - a[2]) * e[2]) / ll
        s = np.clip(s, 0.0, 1.0)
    else:
        s = np.zeros_like(cx)
    qx = cx - (a[0] + s * e[0])
    qy = cy - (a[1] + s * e[1])
    qz = cz - (a[2] + s * e[2])
    near = ~(qx * qx + qy * qy + qz * qz > radius * radius)
    ii, jj, kk = ii[near], jj[near], kk[near]
    inside = (ii >= 0) & (jj >= 0) & (kk >= 0) & (ii < cells.shape[0]) & \
        (jj < cells.shape[1]) & (kk < cells.shape[2])
    if not inside.all():
        return False
    return not _blocked(cells[ii, jj, kk], unknown_blocks).any()


def support_top(cells, origin, res, x, y, z, depth, unknown_support):
    nx, ny, nz = cells.shape
    i = int(math.floor((x - origin[0]) / res))
    j = int(math.floor((y - origin[1]) / res))
    if i < 0 or j < 0 or i >= nx or j >= ny:
        return np.nan
    k_hi = min(int(math.floor((z - origin[2]) / res)), nz - 1)
    k_lo = max(int(math.floor((z - depth - origin[2]) / res)), 0)
    if k_hi < k_lo:
        return np.nan
    column = cells[i, j, k_lo:k_hi + 1][::-1]
    solid = np.flatnonzero(column != FREE)
    if not solid.size:
        return np.nan
    first = int(solid[0])
    if column[first] == OCCUPIED:
        return origin[2] + (k_hi - first + 1) * res
    if not unknown_support:
        return np.nan
    rest = np.flatnonzero(column[first:] != UNKNOWN)
    if not rest.size:
        return origin[2] + (k_lo + 1) * res
    below = first + int(rest[0])
    if column[below] == OCCUPIED:
        return origin[2] + (k_hi - below + 1) * res
    return origin[2] + (k_hi - below + 2) * res


def ground_clear(cells, origin, res, p0, p1, body_height, max_step, radius,
                 unknown_blocks, unknown_support, support_depth):
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    h = p1 - p0
    n = max(1, int(math.ceil(math.sqrt(h[0] * h[0] + h[1] * h[1]) / res)))
    depth = body_height + support_depth
    prev = np.nan
    for m in range(n + 1):
        s = m / n
        x, y, z = p0[0] + s * h[0], p0[1] + s * h[1], p0[2] + s * h[2]
        top = support_top(cells, origin, res, x, y, z, depth, unknown_support)
        if math.isnan(top):
            return False
        if m == 0 and abs(top + body_height - p0[2]) > res + 1e-9:
            return False
        if m > 0 and abs(top - prev) > max_step + 1e-9:
            return False
        if m == n and abs(top + body_height - p1[2]) > res + 1e-9:
            return False
        prev = top
        centre = np.array([x, y, top + body_height])
        if not capsule_clear(cells, origin, res, centre, centre, radius, unknown_blocks):
            return False
    return True
