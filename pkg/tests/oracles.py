"""Slow, independent reference implementations used to check the fast paths.

Nothing here calls into the kernels.  Each oracle solves the same problem a
different way: slab tests instead of incremental DDA, explicit sorted plane
crossings for voxel traversal, per-voxel Python loops for footprints and
buckets, and brute-force enumeration for graph questions.
"""
from __future__ import annotations

import heapq
import itertools
import math

import numpy as np

UNKNOWN, FREE, OCCUPIED = 0, 1, 2


# -- rays ------------------------------------------------------------------------------

def slab_entry(origin, res, pos, u, idx):
    """Entry parameter of the ray ``pos + t u`` into each voxel of ``idx`` (inf if missed)."""
    lo = origin + idx * res
    hi = lo + res
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - pos) / u
        t2 = (hi - pos) / u
    # axis-parallel rays: inside the slab means (-inf, inf), outside means empty
    par = u == 0.0
    inside = (pos >= lo) & (pos < hi)
    t1 = np.where(par, -np.inf, t1)
    t2 = np.where(par, np.inf, t2)
    tn = np.minimum(t1, t2).max(axis=-1)
    tf = np.maximum(t1, t2).min(axis=-1)
    hit = (tn <= tf) & (tf > 0.0) & ~(par & ~inside).any(axis=-1)
    return np.where(hit, np.maximum(tn, 0.0), np.inf)


def first_hits(cells, origin, res, pos, dirs, max_range):
    """Nearest occupied voxel along each ray whose entry lies within ``max_range``."""
    origin = np.asarray(origin, float)
    pos = np.asarray(pos, float)
    occ = np.argwhere(cells == OCCUPIED)
    hit = np.zeros(len(dirs), bool)
    vox = np.full((len(dirs), 3), -1, np.int64)
    if not len(occ):
        return hit, vox
    for n, u in enumerate(np.asarray(dirs, float)):
        t = slab_entry(origin, res, pos, u, occ)
        m = int(np.argmin(t))
        if t[m] <= max_range:
            hit[n] = True
            vox[n] = occ[m]
    return hit, vox


def traverse(origin, res, pos, target):
    """Voxels crossed by the segment from ``pos`` to ``target`` in order.

    Computes every lattice plane crossing explicitly, sorts them and applies
    the index steps in that order.  Stops once the voxel containing
    ``target`` is reached.
    """
    origin = np.asarray(origin, float)
    pos = np.asarray(pos, float)
    target = np.asarray(target, float)
    a = np.floor((pos - origin) / res).astype(int)
    b = np.floor((target - origin) / res).astype(int)
    d = target - pos
    events = []
    for ax in range(3):
        if a[ax] == b[ax]:
            continue
        step = 1 if b[ax] > a[ax] else -1
        planes = range(a[ax] + 1, b[ax] + 1) if step > 0 else range(a[ax], b[ax], -1)
        for k in planes:
            t = (origin[ax] + k * res - pos[ax]) / d[ax]
            events.append((t, ax, step))
    events.sort()
    cur = a.copy()
    out = [tuple(cur)]
    for _, ax, step in events:
        cur[ax] += step
        out.append(tuple(cur))
    return out


def visible(cells, origin, res, pos, target_idx) -> bool:
    centre = np.asarray(origin, float) + (np.asarray(target_idx) + 0.5) * res
    for v in traverse(origin, res, pos, centre)[:-1]:
        if cells[v] == OCCUPIED:
            return False
    return True


def gain_count(cells, origin, res, pos, yaw, fov_h, fov_v, max_range) -> int:
    """Unknown voxels in range and field of view with a clear line of sight.

    The field of view test works in angles (atan2) rather than the dot
    product and tangent comparisons used by the kernels.
    """
    origin = np.asarray(origin, float)
    pos = np.asarray(pos, float)
    count = 0
    half_h = math.radians(fov_h) / 2
    half_v = math.radians(fov_v) / 2
    for idx in np.argwhere(cells == UNKNOWN):
        c = origin + (idx + 0.5) * res
        dx, dy, dz = c - pos
        if dx * dx + dy * dy + dz * dz > max_range * max_range:
            continue
        rxy = math.hypot(dx, dy)
        if fov_h < 360.0:
            bearing = math.atan2(dy, dx) - yaw
            bearing = math.atan2(math.sin(bearing), math.cos(bearing))
            if abs(bearing) > half_h:
                continue
        if fov_v < 180.0 and abs(math.atan2(dz, rxy)) > half_v:
            continue
        if visible(cells, origin, res, pos, tuple(idx)):
            count += 1
    return count


def gain_count_fast(cells, origin, res, pos, yaw, fov_h, fov_v, max_range) -> int:
    """``gain_count`` with the cheap range/FOV filters vectorized.

    The visibility test is still the sorted-crossing traversal, one target
    at a time.
    """
    origin = np.asarray(origin, float)
    pos = np.asarray(pos, float)
    idx = np.argwhere(cells == UNKNOWN)
    c = origin + (idx + 0.5) * res
    d = c - pos
    keep = (d * d).sum(axis=1) <= max_range * max_range
    rxy = np.hypot(d[:, 0], d[:, 1])
    if fov_h < 360.0:
        bearing = np.arctan2(d[:, 1], d[:, 0]) - yaw
        bearing = np.arctan2(np.sin(bearing), np.cos(bearing))
        keep &= np.abs(bearing) <= math.radians(fov_h) / 2
    if fov_v < 180.0:
        keep &= np.abs(np.arctan2(d[:, 2], rxy)) <= math.radians(fov_v) / 2
    occupied = cells == OCCUPIED
    count = 0
    for t in idx[keep]:
        centre = origin + (t + 0.5) * res
        path = traverse(origin, res, pos, centre)[:-1]
        if not any(occupied[v] for v in path):
            count += 1
    return count


# -- ground footprint ------------------------------------------------------------------

def _blocked(state, unknown_blocks):
    return state == OCCUPIED or (unknown_blocks and state == UNKNOWN)


def sphere_clear(cells, origin, res, centre, radius, unknown_blocks) -> bool:
    """Every voxel whose center lies within ``radius`` is free (and inside the grid)."""
    nx, ny, nz = cells.shape
    lo = [int(math.floor((centre[a] - radius - origin[a]) / res)) for a in range(3)]
    hi = [int(math.floor((centre[a] + radius - origin[a]) / res)) for a in range(3)]
    for i in range(lo[0], hi[0] + 1):
        for j in range(lo[1], hi[1] + 1):
            for k in range(lo[2], hi[2] + 1):
                c = [origin[0] + (i + 0.5) * res, origin[1] + (j + 0.5) * res, origin[2] + (k + 0.5) * res]
                if sum((c[a] - centre[a]) ** 2 for a in range(3)) > radius * radius:
                    continue
                if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz):
                    return False
                if _blocked(cells[i, j, k], unknown_blocks):
                    return False
    return True


def column_support(cells, origin, res, x, y, z, depth, unknown_support):
    """Top surface under (x, y) searching down from z; None if unsupported."""
    nx, ny, nz = cells.shape
    i = math.floor((x - origin[0]) / res)
    j = math.floor((y - origin[1]) / res)
    if not (0 <= i < nx and 0 <= j < ny):
        return None
    k_hi = min(math.floor((z - origin[2]) / res), nz - 1)
    k_lo = max(math.floor((z - depth - origin[2]) / res), 0)
    k = k_hi
    while k >= k_lo and cells[i, j, k] == FREE:
        k -= 1
    if k < k_lo:
        return None
    if cells[i, j, k] == OCCUPIED:
        return origin[2] + (k + 1) * res
    if not unknown_support:
        return None
    while k >= k_lo and cells[i, j, k] == UNKNOWN:
        k -= 1
    if k < k_lo:
        return origin[2] + (k_lo + 1) * res
    if cells[i, j, k] == OCCUPIED:
        return origin[2] + (k + 1) * res
    return origin[2] + (k + 2) * res


def ground_ok(cells, origin, res, p0, p1, robot, unknown_blocks=True, unknown_support=False) -> bool:
    origin = [float(v) for v in origin]
    h = [p1[a] - p0[a] for a in range(3)]
    n = max(1, math.ceil(math.hypot(h[0], h[1]) / res))
    depth = robot.body_height + robot.support_depth
    prev = None
    for m in range(n + 1):
        s = m / n
        x, y, z = (p0[a] + s * h[a] for a in range(3))
        top = column_support(cells, origin, res, x, y, z, depth, unknown_support)
        if top is None:
            return False
        if m == 0 and abs(top + robot.body_height - p0[2]) > res + 1e-9:
            return False
        if m > 0 and abs(top - prev) > robot.max_step_height + 1e-9:
            return False
        if m == n and abs(top + robot.body_height - p1[2]) > res + 1e-9:
            return False
        prev = top
        if not sphere_clear(cells, origin, res, (x, y, top + robot.body_height),
                            robot.collision_radius, unknown_blocks):
            return False
    return True


# -- maps ------------------------------------------------------------------------------

def bucket(points, edge):
    """Per-block counts by a scalar floor loop."""
    counts = {}
    for p in points:
        key = tuple(int(math.floor(float(c) / edge)) for c in p)
        counts[key] = counts.get(key, 0) + 1
    return counts


def stale_oracle(local: dict, remote: dict) -> set:
    """Hashes where the remote lacks the block or has a lower version."""
    out = set()
    for h, v in local.items():
        if h not in remote or remote[h] < v:
            out.add(h)
    return out


def curvature(points, hit, k=4, closed=True):
    """Per-ray ring curvature by explicit index loops."""
    rv, rh = hit.shape
    out = np.full((rv, rh), np.nan)
    half = k // 2
    for r in range(rv):
        for c in range(rh):
            if not hit[r, c]:
                continue
            s = np.zeros(3)
            ok = True
            for off in itertools.chain(range(-half, 0), range(1, half + 1)):
                cc = c + off
                if closed:
                    cc %= rh
                elif not 0 <= cc < rh:
                    ok = False
                    break
                if not hit[r, cc]:
                    ok = False
                    break
                s += points[r, cc] - points[r, c]
            if ok:
                p = points[r, c]
                out[r, c] = float(s @ s) / (k * k * float(p @ p))
    return out


# -- graphs ----------------------------------------------------------------------------

def all_simple_paths(adj: dict, a, b):
    stack = [(a, [a])]
    while stack:
        v, path = stack.pop()
        if v == b:
            yield path
            continue
        for w in adj.get(v, ()):
            if w not in path:
                stack.append((w, path + [w]))


def best_path(adj: dict, weight, a, b):
    """(length, path) of the shortest simple path, lexicographic path order on ties; None if none."""
    best = None
    for p in all_simple_paths(adj, a, b):
        length = sum(weight(p[i], p[i + 1]) for i in range(len(p) - 1))
        cand = (length, p)
        if best is None or length < best[0] - 1e-12 or (abs(length - best[0]) <= 1e-12 and p < best[1]):
            best = cand
    return best


def dijkstra_lengths(adj: dict, weight, source):
    dist = {source: 0.0}
    heap = [(0.0, source)]
    while heap:
        d, v = heapq.heappop(heap)
        if d > dist[v]:
            continue
        for w in adj.get(v, ()):
            nd = d + weight(v, w)
            if nd < dist.get(w, math.inf):
                dist[w] = nd
                heapq.heappush(heap, (nd, w))
    return dist


def clusters_n2(points, radius):
    """Single-linkage clusters by repeated O(n^2) flood fill, as sorted index lists."""
    n = len(points)
    label = [-1] * n
    cur = 0
    for s in range(n):
        if label[s] >= 0:
            continue
        label[s] = cur
        frontier = [s]
        while frontier:
            i = frontier.pop()
            for j in range(n):
                if label[j] < 0 and math.dist(points[i], points[j]) <= radius:
                    label[j] = cur
                    frontier.append(j)
        cur += 1
    groups = {}
    for i, c in enumerate(label):
        groups.setdefault(c, []).append(i)
    return sorted(sorted(g) for g in groups.values())
