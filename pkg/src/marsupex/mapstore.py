"""Block-hashed feature map shared between agents.

Space is cut into axis-aligned cubic blocks of edge ``L``; each block keeps
an edge and a planar point set, deduplicated on a voxel lattice, and a
Lamport-style version counter used to decide what to ship.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .worldsim import Pose, ScanPointCloud

HASH_BITS = 21
HASH_OFFSET = 1 << (HASH_BITS - 1)
HASH_MASK = (1 << HASH_BITS) - 1
EDGE = "edge"
PLANAR = "planar"
# L for a cube whose volume (not edge) is 10 m^3
VOLUME_10_EDGE = 10.0 ** (1.0 / 3.0)


class MapMismatch(ValueError):
    """Frames or block edges of two maps disagree."""


def block_index(p, edge: float) -> tuple[int, int, int]:
    i = np.floor(np.asarray(p, dtype=float) / edge).astype(np.int64)
    return int(i[0]), int(i[1]), int(i[2])


def block_center(index, edge: float) -> np.ndarray:
    return (np.asarray(index, dtype=float) + 0.5) * edge


def block_hash(index) -> int:
    """Pack a block index into 63 bits; injective on [-2**20, 2**20)^3."""
    out = 0
    for a in index:
        a = int(a)
        if not -HASH_OFFSET <= a < HASH_OFFSET:
            raise ValueError(f"block index component {a} outside [-2^20, 2^20)")
        out = (out << HASH_BITS) | (a + HASH_OFFSET)
    return out


def unhash(h: int) -> tuple[int, int, int]:
    k = (h & HASH_MASK) - HASH_OFFSET
    j = ((h >> HASH_BITS) & HASH_MASK) - HASH_OFFSET
    i = ((h >> (2 * HASH_BITS)) & HASH_MASK) - HASH_OFFSET
    return i, j, k


def _quantize_mm(pts: np.ndarray) -> np.ndarray:
    # adding 0.0 folds -0.0 into 0.0 so equal keys always carry equal bytes
    return np.round(np.asarray(pts, dtype=float) * 1000.0) / 1000.0 + 0.0


@dataclass
class MapBlock:
    index: tuple[int, int, int]
    edge: dict = field(default_factory=dict)
    planar: dict = field(default_factory=dict)
    version: int = 0

    def points(self, label: str) -> np.ndarray:
        d = self.edge if label == EDGE else self.planar
        if not d:
            return np.zeros((0, 3))
        return np.array([d[k] for k in sorted(d)])

    @property
    def edge_points(self) -> np.ndarray:
        return self.points(EDGE)

    @property
    def planar_points(self) -> np.ndarray:
        return self.points(PLANAR)

    def content(self) -> tuple[frozenset, frozenset]:
        return frozenset(self.edge), frozenset(self.planar)

    def copy(self) -> "MapBlock":
        return MapBlock(self.index, dict(self.edge), dict(self.planar), self.version)

    def digest(self) -> int:
        """64-bit fingerprint of the content (versions excluded)."""
        h = hashlib.blake2b(digest_size=8)
        for store in (self.edge, self.planar):
            h.update(repr(sorted(store.items())).encode())
            h.update(b"|")
        return int.from_bytes(h.digest(), "little")


class UnifiedMap:
    def __init__(self, block_edge: float = 10.0, resolution: float = 0.25, frame: str = "unified"):
        if block_edge <= 0 or resolution <= 0:
            raise ValueError("block_edge and resolution must be > 0")
        self.block_edge = float(block_edge)
        self.resolution = float(resolution)
        self.frame = frame
        self.blocks: dict[int, MapBlock] = {}
        self._snapshot = None

    def __len__(self):
        return len(self.blocks)

    def _check(self, other_edge: float, other_frame: str, other_res: float | None = None):
        if other_edge != self.block_edge or other_frame != self.frame or \
                (other_res is not None and other_res != self.resolution):
            raise MapMismatch(
                f"map mismatch: edge {other_edge} vs {self.block_edge}, frame {other_frame!r} vs {self.frame!r}")

    def summary(self) -> dict[int, tuple[int, int]]:
        """Per block hash: (version, content digest)."""
        return {h: (b.version, b.digest()) for h, b in self.blocks.items()}

    def versions(self) -> dict[int, int]:
        return {h: b.version for h, b in self.blocks.items()}

    def point_set(self) -> frozenset:
        """Content as (label, voxel key) pairs; versions excluded."""
        out = set()
        for b in self.blocks.values():
            out.update((EDGE, k) for k in b.edge)
            out.update((PLANAR, k) for k in b.planar)
        return frozenset(out)

    def all_points(self, label: str) -> np.ndarray:
        parts = [self.blocks[h].points(label) for h in sorted(self.blocks)]
        parts = [p for p in parts if len(p)]
        return np.concatenate(parts) if parts else np.zeros((0, 3))

    def n_points(self) -> int:
        return sum(len(b.edge) + len(b.planar) for b in self.blocks.values())

    def copy(self) -> "UnifiedMap":
        m = UnifiedMap(self.block_edge, self.resolution, self.frame)
        m.blocks = {h: b.copy() for h, b in self.blocks.items()}
        return m

    def _key(self, p) -> tuple[int, int, int]:
        q = np.floor(np.asarray(p, dtype=float) / self.resolution).astype(np.int64)
        return int(q[0]), int(q[1]), int(q[2])

    # -- population ---------------------------------------------------------
    def insert_points(self, points, labels) -> set[int]:
        """Route labelled points to their blocks; returns hashes of changed blocks."""
        pts = _quantize_mm(np.asarray(points, dtype=float).reshape(-1, 3))
        labels = list(labels) if not isinstance(labels, str) else [labels] * len(pts)
        if len(labels) != len(pts):
            raise ValueError("one label per point required")
        touched = set()
        for p, lab in zip(pts, labels):
            if lab not in (EDGE, PLANAR):
                raise ValueError(f"unknown label {lab!r}")
            idx = block_index(p, self.block_edge)
            h = block_hash(idx)
            blk = self.blocks.get(h)
            if blk is None:
                blk = self.blocks[h] = MapBlock(idx)
            store = blk.edge if lab == EDGE else blk.planar
            k = self._key(p)
            if k not in store:
                store[k] = (float(p[0]), float(p[1]), float(p[2]))
                touched.add(h)
        for h in touched:
            self.blocks[h].version += 1
        if touched:
            self._snapshot = None
        return touched

    # -- sharing ------------------------------------------------------------
    def blocks_for(self, hashes) -> list[MapBlock]:
        return [self.blocks[h].copy() for h in sorted(hashes) if h in self.blocks]

    def merge_blocks(self, incoming, block_edge: float | None = None, frame: str | None = None) -> set[int]:
        """Union incoming block contents into this map; returns changed hashes."""
        self._check(self.block_edge if block_edge is None else block_edge,
                    self.frame if frame is None else frame)
        changed = set()
        for blk in incoming:
            h = block_hash(blk.index)
            mine = self.blocks.get(h)
            if mine is None:
                mine = self.blocks[h] = MapBlock(tuple(blk.index))
                fresh = True
            else:
                fresh = False
            diff = _union_into(mine.edge, blk.edge) | _union_into(mine.planar, blk.planar)
            if fresh or diff:
                mine.version = max(mine.version, blk.version) + 1
                changed.add(h)
            else:
                # nothing new: still adopt the sender's clock so that
                # repeated exchanges settle
                mine.version = max(mine.version, blk.version)
        if changed:
            self._snapshot = None
        return changed

    def kd_snapshot(self):
        """Cached (edge tree, edge pts, planar tree, planar pts) for NN queries."""
        if self._snapshot is None:
            from scipy.spatial import cKDTree

            e = self.all_points(EDGE)
            p = self.all_points(PLANAR)
            self._snapshot = (cKDTree(e) if len(e) else None, e,
                              cKDTree(p) if len(p) else None, p)
        return self._snapshot


def _union_into(store: dict, incoming: dict) -> bool:
    """Union keyed points; on a key clash the smaller coordinate wins so the
    result does not depend on merge order."""
    changed = False
    for k, p in incoming.items():
        cur = store.get(k)
        if cur is None or p < cur:
            store[k] = p
            changed = True
    return changed


def diff_blocks(local: UnifiedMap, remote_summary: dict, *,
                remote_edge: float | None = None, remote_frame: str | None = None) -> set[int]:
    """Hashes the remote lacks or holds stale.

    ``remote_summary`` maps hash -> version, or hash -> (version, digest).
    Stale means a lower version; with digests, an equal version whose
    content differs is stale on both sides, since independent writers can
    reach the same counter value.
    """
    if remote_edge is not None or remote_frame is not None:
        local._check(local.block_edge if remote_edge is None else remote_edge,
                     local.frame if remote_frame is None else remote_frame)
    out = set()
    for h, blk in local.blocks.items():
        if h not in remote_summary:
            out.add(h)
            continue
        remote = remote_summary[h]
        if isinstance(remote, tuple):
            rv, rd = remote
            if blk.version > rv or (blk.version == rv and blk.digest() != rd):
                out.add(h)
        elif blk.version > remote:
            out.add(h)
    return out


def merge_blocks(m: UnifiedMap, incoming, block_edge: float | None = None, frame: str | None = None) -> UnifiedMap:
    m.merge_blocks(incoming, block_edge, frame)
    return m


def sync(a: UnifiedMap, b: UnifiedMap, max_rounds: int = 8) -> tuple[int, int]:
    """Exchange diffs in both directions until neither side has anything newer.

    Returns the total number of blocks sent a->b and b->a.  Concurrently
    edited blocks can need a second round: the first pass may only move the
    higher-versioned copy.
    """
    a._check(b.block_edge, b.frame, b.resolution)
    sent_ab = sent_ba = 0
    for _ in range(max_rounds):
        to_a = b.blocks_for(diff_blocks(b, a.summary()))
        a.merge_blocks(to_a)
        to_b = a.blocks_for(diff_blocks(a, b.summary()))
        b.merge_blocks(to_b)
        sent_ab += len(to_b)
        sent_ba += len(to_a)
        if not to_a and not to_b:
            break
    return sent_ab, sent_ba


# -- wire format -----------------------------------------------------------------
# record: u32 length | u64 hash | u32 version | u32 n_edge | u32 n_planar |
#         (n_edge + n_planar) x 3 x i32 millimetres, all little-endian

_HEAD = struct.Struct("<QIII")


def encode_block(blk: MapBlock) -> bytes:
    e = blk.edge_points
    p = blk.planar_points
    body = _HEAD.pack(block_hash(blk.index), blk.version, len(e), len(p))
    pts = np.concatenate([e, p]) if len(e) + len(p) else np.zeros((0, 3))
    mm = np.round(pts * 1000.0).astype("<i4")
    body += mm.tobytes()
    return struct.pack("<I", len(body)) + body


def encode_blocks(blocks) -> bytes:
    return b"".join(encode_block(b) for b in sorted(blocks, key=lambda b: block_hash(b.index)))


def decode_blocks(data: bytes, resolution: float) -> list[MapBlock]:
    out = []
    off = 0
    while off < len(data):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        h, version, ne, npl = _HEAD.unpack_from(data, off)
        mm = np.frombuffer(data, dtype="<i4", count=3 * (ne + npl), offset=off + _HEAD.size)
        pts = mm.reshape(-1, 3).astype(float) / 1000.0
        off += n
        blk = MapBlock(unhash(h), version=version)
        for j, p in enumerate(pts):
            key = tuple(int(v) for v in np.floor(p / resolution).astype(np.int64))
            (blk.edge if j < ne else blk.planar)[key] = (float(p[0]), float(p[1]), float(p[2]))
        out.append(blk)
    return out


# -- feature extraction ----------------------------------------------------------

@dataclass(frozen=True)
class FeatureParams:
    k: int = 4
    edge_quantile: float = 0.10
    planar_quantile: float = 0.40
    edge_min_curvature: float = 5e-3
    planar_max_curvature: float = 1e-6


def scan_curvature(scan: ScanPointCloud, k: int = 4) -> np.ndarray:
    """Curvature per ray from its ``k`` ring neighbours (k/2 each side).

    ``c = |sum_j (p_j - p_i)|^2 / (k |p_i|)^2``; NaN where the point or a
    neighbour is missing.  Rings wrap only for full-turn scans.
    """
    pts = scan.points
    valid = scan.hit
    half = k // 2
    n = pts.shape[1]
    acc = np.zeros(pts.shape)
    ok = valid.copy()
    cols = np.arange(n)
    for off in range(-half, half + 1):
        if off == 0:
            continue
        rolled = np.roll(pts, -off, axis=1)
        ok &= np.roll(valid, -off, axis=1)
        if not scan.closed:
            ok &= ((cols + off >= 0) & (cols + off < n))[None, :]
        acc += np.where(ok[..., None], rolled - pts, 0.0)
    nrm = np.einsum("...i,...i->...", np.where(valid[..., None], pts, 0.0),
                    np.where(valid[..., None], pts, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.einsum("...i,...i->...", acc, acc) / (k * k * nrm)
    c[~ok] = np.nan
    return c


def classify(curv: np.ndarray, params: FeatureParams = FeatureParams()) -> tuple[np.ndarray, np.ndarray]:
    """Edge / planar masks from curvature quantiles over the valid points."""
    valid = ~np.isnan(curv)
    edge = np.zeros(curv.shape, bool)
    planar = np.zeros(curv.shape, bool)
    if not valid.any():
        return edge, planar
    vals = curv[valid]
    hi = np.quantile(vals, 1.0 - params.edge_quantile)
    lo = np.quantile(vals, params.planar_quantile)
    with np.errstate(invalid="ignore"):
        edge = valid & (curv >= hi) & (curv > params.edge_min_curvature)
        planar = valid & ~edge & ((curv <= lo) | (curv <= params.planar_max_curvature))
    return edge, planar


def extract_features(scan: ScanPointCloud, pose: Pose, params: FeatureParams = FeatureParams(),
                     frame: str = "world") -> tuple[np.ndarray, list[str]]:
    """Curvature-classified points; ``frame='world'`` applies ``pose``."""
    curv = scan_curvature(scan, params.k)
    per_ring = np.count_nonzero(scan.hit, axis=1)
    curv[per_ring < params.k + 1, :] = np.nan
    edge, planar = classify(curv, params)
    pts = np.concatenate([scan.points[edge], scan.points[planar]])
    labels = [EDGE] * int(edge.sum()) + [PLANAR] * int(planar.sum())
    if frame == "world" and len(pts):
        pts = pose.to_world(pts)
    return pts.reshape(-1, 3), labels
