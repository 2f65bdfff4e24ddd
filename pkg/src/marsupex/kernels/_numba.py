"""Loop kernels compiled with numba.

All grids are ``uint8`` arrays indexed ``[ix, iy, iz]`` holding
0 = unknown, 1 = free, 2 = occupied.  Geometry is passed as plain floats so
that the numpy twin in ``_numpy.py`` can reproduce every expression
operation-for-operation.
"""
from __future__ import annotations

import math

import numpy as np

from .._backend import njit

UNKNOWN = 0
FREE = 1
OCCUPIED = 2
SQRT3 = math.sqrt(3.0)
INF = np.inf


@njit(cache=True)
def _axis_setup(p, o, i, u, res):
    if u > 0.0:
        return 1, ((i + 1) * res + o - p) / u, res / u
    if u < 0.0:
        return -1, (i * res + o - p) / u, -res / u
    return 0, INF, INF


@njit(cache=True)
def raycast(cells, origin, res, pos, dirs, max_range):
    """First occupied voxel along each unit direction, or a miss.

    Returns ``(hit, vox, t_entry)``; ``t_entry`` is the range at which the
    hit voxel is entered.
    """
    nx, ny, nz = cells.shape
    n = dirs.shape[0]
    hit = np.zeros(n, dtype=np.bool_)
    vox = np.full((n, 3), -1, dtype=np.int64)
    t_hit = np.full(n, np.nan)
    px, py, pz = pos[0], pos[1], pos[2]
    ix0 = int(math.floor((px - origin[0]) / res))
    iy0 = int(math.floor((py - origin[1]) / res))
    iz0 = int(math.floor((pz - origin[2]) / res))
    for r in range(n):
        ux, uy, uz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        sx, tmx, tdx = _axis_setup(px, origin[0], ix0, ux, res)
        sy, tmy, tdy = _axis_setup(py, origin[1], iy0, uy, res)
        sz, tmz, tdz = _axis_setup(pz, origin[2], iz0, uz, res)
        i, j, k = ix0, iy0, iz0
        t = 0.0
        while t <= max_range:
            if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
                break
            if cells[i, j, k] == OCCUPIED:
                hit[r] = True
                vox[r, 0] = i
                vox[r, 1] = j
                vox[r, 2] = k
                t_hit[r] = t
                break
            if tmx < tmy:
                if tmx < tmz:
                    i += sx
                    t = tmx
                    tmx += tdx
                else:
                    k += sz
                    t = tmz
                    tmz += tdz
            else:
                if tmy < tmz:
                    j += sy
                    t = tmy
                    tmy += tdy
                else:
                    k += sz
                    t = tmz
                    tmz += tdz
    return hit, vox, t_hit


@njit(cache=True)
def integrate(cells, origin, res, pos, dirs, hit, vox, max_range):
    """Carve free space up to each hit and mark the hit occupied, in place.

    Returns the number of voxels that left the unknown state.
    """
    nx, ny, nz = cells.shape
    n = dirs.shape[0]
    px, py, pz = pos[0], pos[1], pos[2]
    ix0 = int(math.floor((px - origin[0]) / res))
    iy0 = int(math.floor((py - origin[1]) / res))
    iz0 = int(math.floor((pz - origin[2]) / res))
    changed = 0
    for r in range(n):
        ux, uy, uz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        sx, tmx, tdx = _axis_setup(px, origin[0], ix0, ux, res)
        sy, tmy, tdy = _axis_setup(py, origin[1], iy0, uy, res)
        sz, tmz, tdz = _axis_setup(pz, origin[2], iz0, uz, res)
        i, j, k = ix0, iy0, iz0
        hi, hj, hk = vox[r, 0], vox[r, 1], vox[r, 2]
        is_hit = hit[r]
        # a hit is always entered before max_range; the slack only guards
        # against a replayed ray drifting past it
        limit = max_range + 2.0 * res if is_hit else max_range
        t = 0.0
        while t <= limit:
            if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
                break
            if is_hit and i == hi and j == hj and k == hk:
                if cells[i, j, k] == UNKNOWN:
                    changed += 1
                cells[i, j, k] = OCCUPIED
                break
            c = cells[i, j, k]
            if c == UNKNOWN:
                changed += 1
                cells[i, j, k] = FREE
            if tmx < tmy:
                if tmx < tmz:
                    i += sx
                    t = tmx
                    tmx += tdx
                else:
                    k += sz
                    t = tmz
                    tmz += tdz
            else:
                if tmy < tmz:
                    j += sy
                    t = tmy
                    tmy += tdy
                else:
                    k += sz
                    t = tmz
                    tmz += tdz
    return changed


@njit(cache=True)
def _visible(cells, clearance, use_clear, origin, res, px, py, pz, ti, tj, tk):
    nx, ny, nz = cells.shape
    cx = origin[0] + (ti + 0.5) * res
    cy = origin[1] + (tj + 0.5) * res
    cz = origin[2] + (tk + 0.5) * res
    dx = cx - px
    dy = cy - py
    dz = cz - pz
    length = math.sqrt(dx * dx + dy * dy + dz * dz)
    if length == 0.0:
        return True
    ux = dx / length
    uy = dy / length
    uz = dz / length
    # DDA state is rebuilt from a point strictly inside a voxel after every
    # clearance jump
    t0 = 0.0
    t = 0.0
    while True:
        qx = px + t0 * ux
        qy = py + t0 * uy
        qz = pz + t0 * uz
        i = int(math.floor((qx - origin[0]) / res))
        j = int(math.floor((qy - origin[1]) / res))
        k = int(math.floor((qz - origin[2]) / res))
        sx, tmx, tdx = _axis_setup(qx, origin[0], i, ux, res)
        sy, tmy, tdy = _axis_setup(qy, origin[1], j, uy, res)
        sz, tmz, tdz = _axis_setup(qz, origin[2], k, uz, res)
        tmx += t0
        tmy += t0
        tmz += t0
        jumped = False
        while True:
            if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
                return True
            if i == ti and j == tj and k == tk:
                return True
            if cells[i, j, k] == OCCUPIED:
                return False
            if use_clear:
                safe = clearance[i, j, k] - SQRT3 * res
                if safe > res:
                    t0 = t + safe
                    if t0 >= length:
                        return True
                    jumped = True
                    break
            if tmx < tmy:
                if tmx < tmz:
                    i += sx
                    t = tmx
                    tmx += tdx
                else:
                    k += sz
                    t = tmz
                    tmz += tdz
            else:
                if tmy < tmz:
                    j += sy
                    t = tmy
                    tmy += tdy
                else:
                    k += sz
                    t = tmz
                    tmz += tdz
            if t > length:
                return True
        if not jumped:
            return True
        t = t0


@njit(cache=True)
def gain(cells, clearance, use_clear, origin, res, pos, cos_yaw, sin_yaw,
         cos_half_h, full_h, tan_half_v, full_v, max_range):
    """Count unknown voxels in range, inside the sensor cone, and unoccluded."""
    nx, ny, nz = cells.shape
    px, py, pz = pos[0], pos[1], pos[2]
    r2 = max_range * max_range
    lo_i = max(0, int(math.floor((px - max_range - origin[0]) / res)))
    hi_i = min(nx - 1, int(math.floor((px + max_range - origin[0]) / res)))
    lo_j = max(0, int(math.floor((py - max_range - origin[1]) / res)))
    hi_j = min(ny - 1, int(math.floor((py + max_range - origin[1]) / res)))
    lo_k = max(0, int(math.floor((pz - max_range - origin[2]) / res)))
    hi_k = min(nz - 1, int(math.floor((pz + max_range - origin[2]) / res)))
    count = 0
    for i in range(lo_i, hi_i + 1):
        dx = origin[0] + (i + 0.5) * res - px
        for j in range(lo_j, hi_j + 1):
            dy = origin[1] + (j + 0.5) * res - py
            dxy2 = dx * dx + dy * dy
            if dxy2 > r2:
                continue
            rxy = math.sqrt(dxy2)
            if not full_h:
                if dx * cos_yaw + dy * sin_yaw < cos_half_h * rxy:
                    continue
            for k in range(lo_k, hi_k + 1):
                if cells[i, j, k] != UNKNOWN:
                    continue
                dz = origin[2] + (k + 0.5) * res - pz
                if dxy2 + dz * dz > r2:
                    continue
                if not full_v:
                    if abs(dz) > tan_half_v * rxy:
                        continue
                if _visible(cells, clearance, use_clear, origin, res, px, py, pz, i, j, k):
                    count += 1
    return count


@njit(cache=True)
def gain_many(cells, clearance, use_clear, origin, res, positions, yaws,
              cos_half_h, full_h, tan_half_v, full_v, max_range):
    out = np.zeros(positions.shape[0], dtype=np.int64)
    for m in range(positions.shape[0]):
        out[m] = gain(cells, clearance, use_clear, origin, res, positions[m],
                      math.cos(yaws[m]), math.sin(yaws[m]), cos_half_h, full_h,
                      tan_half_v, full_v, max_range)
    return out


@njit(cache=True)
def _blocked(state, unknown_blocks):
    return state == OCCUPIED or (unknown_blocks and state == UNKNOWN)


@njit(cache=True)
def capsule_clear(cells, origin, res, p0, p1, radius, unknown_blocks):
    """No blocking voxel center lies within ``radius`` of segment p0-p1.

    Voxels outside the grid count as blocking.
    """
    nx, ny, nz = cells.shape
    ax, ay, az = p0[0], p0[1], p0[2]
    bx, by, bz = p1[0], p1[1], p1[2]
    ex = bx - ax
    ey = by - ay
    ez = bz - az
    ll = ex * ex + ey * ey + ez * ez
    r2 = radius * radius
    lo_i = int(math.floor((min(ax, bx) - radius - origin[0]) / res))
    hi_i = int(math.floor((max(ax, bx) + radius - origin[0]) / res))
    lo_j = int(math.floor((min(ay, by) - radius - origin[1]) / res))
    hi_j = int(math.floor((max(ay, by) + radius - origin[1]) / res))
    lo_k = int(math.floor((min(az, bz) - radius - origin[2]) / res))
    hi_k = int(math.floor((max(az, bz) + radius - origin[2]) / res))
    for i in range(lo_i, hi_i + 1):
        cx = origin[0] + (i + 0.5) * res
        for j in range(lo_j, hi_j + 1):
            cy = origin[1] + (j + 0.5) * res
            for k in range(lo_k, hi_k + 1):
                cz = origin[2] + (k + 0.5) * res
                s = 0.0
                if ll > 0.0:
                    s = ((cx - ax) * ex + (cy - ay) * ey + (cz - az) * ez) / ll
                    if s < 0.0:
                        s = 0.0
                    elif s > 1.0:
                        s = 1.0
                qx = cx - (ax + s * ex)
                qy = cy - (ay + s * ey)
                qz = cz - (az + s * ez)
                if qx * qx + qy * qy + qz * qz > r2:
                    continue
                if i < 0 or j < 0 or k < 0 or i >= nx or j >= ny or k >= nz:
                    return False
                if _blocked(cells[i, j, k], unknown_blocks):
                    return False
    return True


@njit(cache=True)
def support_top(cells, origin, res, x, y, z, depth, unknown_support):
    """Top face height of the first non-free voxel at or below ``z``.

    Returns NaN when the column is off-grid, nothing is found within
    ``depth``, or the first non-free voxel is unknown and unknown support is
    not accepted.  With unknown support, a run of unknown voxels resolves to
    the occupied voxel right under it, else to the run's lowest voxel.
    """
    nx, ny, nz = cells.shape
    i = int(math.floor((x - origin[0]) / res))
    j = int(math.floor((y - origin[1]) / res))
    if i < 0 or j < 0 or i >= nx or j >= ny:
        return np.nan
    k_hi = int(math.floor((z - origin[2]) / res))
    k_lo = int(math.floor((z - depth - origin[2]) / res))
    if k_hi > nz - 1:
        k_hi = nz - 1
    if k_lo < 0:
        k_lo = 0
    k = k_hi
    while k >= k_lo and cells[i, j, k] == FREE:
        k -= 1
    if k < k_lo:
        return np.nan
    if cells[i, j, k] == OCCUPIED:
        return origin[2] + (k + 1) * res
    if not unknown_support:
        return np.nan
    # optimistic: look through the unknown run for the surface beneath it
    while k - 1 >= k_lo and cells[i, j, k - 1] == UNKNOWN:
        k -= 1
    if k - 1 >= k_lo and cells[i, j, k - 1] == OCCUPIED:
        k -= 1
    return origin[2] + (k + 1) * res


@njit(cache=True)
def ground_clear(cells, origin, res, p0, p1, body_height, max_step, radius,
                 unknown_blocks, unknown_support, support_depth):
    """Footprint sweep for a legged robot whose body rides ``body_height``
    above the support surface."""
    hx = p1[0] - p0[0]
    hy = p1[1] - p0[1]
    hz = p1[2] - p0[2]
    n = int(math.ceil(math.sqrt(hx * hx + hy * hy) / res))
    if n < 1:
        n = 1
    depth = body_height + support_depth
    prev = np.nan
    centre = np.empty(3)
    for m in range(n + 1):
        s = m / n
        x = p0[0] + s * hx
        y = p0[1] + s * hy
        z = p0[2] + s * hz
        top = support_top(cells, origin, res, x, y, z, depth, unknown_support)
        if math.isnan(top):
            return False
        if m == 0:
            if abs(top + body_height - p0[2]) > res + 1e-9:
                return False
        else:
            if abs(top - prev) > max_step + 1e-9:
                return False
        if m == n:
            if abs(top + body_height - p1[2]) > res + 1e-9:
                return False
        prev = top
        centre[0] = x
        centre[1] = y
        centre[2] = top + body_height
        if not capsule_clear(cells, origin, res, centre, centre, radius, unknown_blocks):
            return False
    return True
