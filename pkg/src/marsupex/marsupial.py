"""Deployment planning for a ferried aerial robot.

The ground robot maintains a sparse deployment graph whose vertices are
scored with the *aerial* sensor model.  When its own local planner runs out
of gain, vertices that are far enough from the robot and from remaining
ground frontiers are clustered into candidate deployment regions; the closest
one (by global-graph path length) is chosen and a handoff package is built.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .mapstore import MapBlock, UnifiedMap, block_hash, decode_blocks, encode_blocks
from .planner import (ExplorationGraph, GraphKind, PathError, PlannerParams, VolumetricGain,
                      _Attacher, evaluate_gains, shortest_path)
from .worldsim import Pose, RobotSpec, SensorSpec, VoxelGrid, project_to_ground


@dataclass
class MarsupialConfig:
    r_m: float = 10.0
    r_g: float = 8.0
    cluster_radius: float = 4.0
    vertical_bonus: float = 0.3
    covered_penalty: float = 0.3
    direction: str = "up"
    min_region_gain: float | None = None
    samples_per_pose: int = 4
    sample_radius: float = 3.0
    deploy_on_branch: bool = False
    branch_min_separation: float = 60.0
    branch_min_angle: float = 45.0    # degrees, as seen from the robot
    branch_min_gain_ratio: float = 0.5  # of the best frontier's score
    rearm: bool = False

    def __post_init__(self):
        if min(self.r_m, self.r_g, self.cluster_radius) <= 0:
            raise ValueError("r_m, r_g and cluster_radius must be > 0")
        if not 0.0 <= self.covered_penalty < 1.0:
            raise ValueError("covered_penalty must lie in [0, 1)")
        if self.vertical_bonus < 0:
            raise ValueError("vertical_bonus must be >= 0")
        if self.direction not in ("up", "down"):
            raise ValueError("direction must be 'up' or 'down'")


class DeploymentGraph(ExplorationGraph):
    """Sparse ground-reachable graph; vertex ``gain`` holds the aerial-sensor gain."""

    def __init__(self):
        super().__init__(GraphKind.DEPLOYMENT)

    def aerial_gain(self, vid: int) -> VolumetricGain | None:
        return self.vertices[vid].gain

    @classmethod
    def from_text(cls, text: str, resolution: float) -> "DeploymentGraph":
        g = ExplorationGraph.from_text(text, resolution)
        out = cls()
        out.vertices, out.adj, out.root, out._next = g.vertices, g.adj, g.root, g._next
        return out

    def copy(self) -> "DeploymentGraph":
        g = super().copy()
        out = DeploymentGraph()
        out.vertices, out.adj, out.root, out._next = g.vertices, g.adj, g.root, g._next
        return out


@dataclass
class DeploymentRegion:
    center: np.ndarray
    members: list[int]
    aggregate_gain: float
    nearest_global_vertex: int | None

    def key(self) -> tuple:
        return tuple(float(c) for c in self.center)


def _deployment_params(params: PlannerParams, cfg: MarsupialConfig) -> PlannerParams:
    # vertex spacing is edge_radius / 2 inside the attacher
    return PlannerParams(local_bbox=params.local_bbox, n_samples=params.n_samples,
                         edge_radius=cfg.cluster_radius, gain_range=params.gain_range,
                         completion_gain_threshold=params.completion_gain_threshold,
                         path_gain_lambda=params.path_gain_lambda,
                         global_connect_radius=2.0 * cfg.cluster_radius,
                         max_global_edges=params.max_global_edges, unknown_support=False)


def update_deployment_graph(gm: DeploymentGraph, grid: VoxelGrid, aerial_sensor: SensorSpec,
                            executed_path: list[Pose], ground: RobotSpec, params: PlannerParams,
                            cfg: MarsupialConfig, rng: np.random.Generator,
                            gain_range: float | None = None, score: bool = True) -> DeploymentGraph:
    """Grow ``gm`` over freshly explored ground and rescore it with the aerial sensor.

    Candidates are the executed path poses plus ``cfg.samples_per_pose``
    random ground projections within ``cfg.sample_radius`` of each of them,
    all on known support.  With ``score`` set, gains are refreshed for every
    vertex that could still matter (unscored, or last scored at or above the
    threshold); gains only shrink as the map fills in, so the rest stay valid.
    """
    dp = _deployment_params(params, cfg)
    att = _Attacher(gm, grid, ground, dp)
    prev = None
    for pose in executed_path:
        prev = att.attach(Pose(pose.x, pose.y, pose.z), prev)
        for _ in range(cfg.samples_per_pose):
            off = rng.uniform(-cfg.sample_radius, cfg.sample_radius, 2)
            cand = project_to_ground(grid, pose.x + off[0], pose.y + off[1], pose.z + 0.5, ground)
            if cand is not None:
                att.attach(cand, None)
    if not score:
        return gm
    thr = params.completion_gain_threshold
    todo = [v for v in gm.ids() if gm.vertices[v].gain is None or gm.vertices[v].gain.volume >= thr]
    if todo:
        rng_ = gain_range if gain_range is not None else aerial_sensor.max_range
        gains = evaluate_gains(grid, [gm.pose(v) for v in todo], aerial_sensor, rng_)
        for v, gn in zip(todo, gains):
            gm.vertices[v].gain = gn
    return gm


def single_linkage(points: np.ndarray, radius: float) -> list[list[int]]:
    """Clusters of point indices chained by links shorter than or equal to ``radius``."""
    n = len(points)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    if n > 1:
        for a, b in cKDTree(points).query_pairs(radius):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def eligible_vertices(gm: DeploymentGraph, robot_pose: Pose, ground_frontiers: list[Pose],
                      cfg: MarsupialConfig, threshold: float) -> list[int]:
    front = np.array([p.position for p in ground_frontiers]).reshape(-1, 3)
    out = []
    for vid in gm.ids():
        v = gm.vertices[vid]
        if v.gain is None or v.gain.volume < threshold:
            continue
        p = v.pose.position
        if np.linalg.norm(p - robot_pose.position) <= cfg.r_m:
            continue
        if len(front) and np.min(np.linalg.norm(front - p, axis=1)) <= cfg.r_g:
            continue
        out.append(vid)
    return out


def identify_deployment_regions(gm: DeploymentGraph, robot_pose: Pose, ground_frontiers: list[Pose],
                                cfg: MarsupialConfig, threshold: float,
                                global_graph: ExplorationGraph | None = None) -> list[DeploymentRegion]:
    """Filter by the r_m / r_g exclusions, then single-linkage cluster."""
    ids = eligible_vertices(gm, robot_pose, ground_frontiers, cfg, threshold)
    if not ids:
        return []
    pos = gm.positions(ids)
    regions = []
    for group in single_linkage(pos, cfg.cluster_radius):
        members = [ids[i] for i in group]
        center = pos[group].mean(axis=0)
        agg = float(sum(gm.vertices[m].gain.volume for m in members))
        if cfg.min_region_gain is not None and agg < cfg.min_region_gain:
            continue
        near = global_graph.nearest(center) if global_graph is not None else None
        regions.append(DeploymentRegion(center, members, agg, near))
    return sorted(regions, key=DeploymentRegion.key)


def select_deployment(global_graph: ExplorationGraph, regions: list[DeploymentRegion],
                      current: int) -> tuple[DeploymentRegion, list[Pose], float] | None:
    """Region with the shortest global-graph path from ``current``.

    Equal lengths resolve to the lexicographically smaller region center.
    """
    best = None
    for reg in regions:
        if reg.nearest_global_vertex is None:
            continue
        try:
            path, length = shortest_path(global_graph, current, reg.nearest_global_vertex)
        except PathError:
            continue
        if best is None or (length, reg.key()) < (best[2], best[0].key()):
            best = (reg, path, length)
    return best


# -- handoff ---------------------------------------------------------------------

@dataclass
class HandoffPackage:
    blocks: list[MapBlock]
    deployment_graph: DeploymentGraph
    ground_pose: Pose
    bbox: tuple[np.ndarray, np.ndarray]
    direction: str
    return_pose: Pose
    resolution: float = 0.25
    block_edge: float = 10.0
    frame: str = "unified"
    hashes: list[int] = field(default_factory=list)

    def inside(self, p) -> bool:
        p = np.asarray(p, float)
        return bool((p >= self.bbox[0]).all() and (p <= self.bbox[1]).all())


def clip_bbox(global_bbox, ground_pose: Pose, direction: str):
    lo = np.array(global_bbox[0], float)
    hi = np.array(global_bbox[1], float)
    if direction == "up":
        lo[2] = ground_pose.z
    else:
        hi[2] = ground_pose.z
    return lo, hi


def make_handoff(gm: DeploymentGraph, umap: UnifiedMap, ground_pose: Pose, global_bbox,
                 direction: str = "up", horizontal=None) -> HandoffPackage:
    """Snapshot everything the aerial robot needs at deployment.

    ``horizontal`` optionally narrows the box in x/y as ((xmin, ymin), (xmax, ymax)).
    """
    lo, hi = clip_bbox(global_bbox, ground_pose, direction)
    if horizontal is not None:
        lo[:2] = np.maximum(lo[:2], horizontal[0])
        hi[:2] = np.minimum(hi[:2], horizontal[1])
    blocks = [b.copy() for _, b in sorted(umap.blocks.items())]
    return HandoffPackage(blocks, gm.copy(), ground_pose, (lo, hi), direction, ground_pose,
                          umap.resolution, umap.block_edge, umap.frame,
                          [block_hash(b.index) for b in blocks])


_HANDOFF_MAGIC = b"MXH1"
_HANDOFF_HEAD = struct.Struct("<4s8d6dB3d")


def encode_handoff(pkg: HandoffPackage) -> bytes:
    """Header | u32 n + block records | u32 n + utf-8 graph text | u32 n + frame name."""
    g, r = pkg.ground_pose, pkg.return_pose
    head = _HANDOFF_HEAD.pack(_HANDOFF_MAGIC, g.x, g.y, g.z, g.yaw, r.x, r.y, r.z, r.yaw,
                              *map(float, pkg.bbox[0]), *map(float, pkg.bbox[1]),
                              0 if pkg.direction == "up" else 1,
                              pkg.resolution, pkg.block_edge, 0.0)
    blocks = encode_blocks(pkg.blocks)
    text = pkg.deployment_graph.to_text().encode()
    frame = pkg.frame.encode()
    return b"".join([head, struct.pack("<I", len(blocks)), blocks, struct.pack("<I", len(text)), text,
                     struct.pack("<I", len(frame)), frame])


def decode_handoff(data: bytes) -> HandoffPackage:
    vals = _HANDOFF_HEAD.unpack_from(data, 0)
    if vals[0] != _HANDOFF_MAGIC:
        raise ValueError("not a handoff package")
    g = Pose(*vals[1:5])
    r = Pose(*vals[5:9])
    lo, hi = np.array(vals[9:12]), np.array(vals[12:15])
    direction = "up" if vals[15] == 0 else "down"
    resolution, block_edge = vals[16], vals[17]
    off = _HANDOFF_HEAD.size

    def chunk(off):
        (n,) = struct.unpack_from("<I", data, off)
        return data[off + 4: off + 4 + n], off + 4 + n

    braw, off = chunk(off)
    traw, off = chunk(off)
    fraw, off = chunk(off)
    blocks = decode_blocks(braw, resolution)
    gm = DeploymentGraph.from_text(traw.decode(), resolution)
    return HandoffPackage(blocks, gm, g, (lo, hi), direction, r, resolution, block_edge,
                          fraw.decode(), [block_hash(b.index) for b in blocks])


# -- aerial gain shaping -----------------------------------------------------------

def modulate_aerial_gain(raw: VolumetricGain, vertex_pose: Pose, handoff: HandoffPackage,
                         cfg: MarsupialConfig, _tree=None) -> float:
    """Reward altitude change from the deployment height, discount ground-covered areas."""
    if not handoff.inside(vertex_pose.position):
        return 0.0
    bonus = 1.0 + cfg.vertical_bonus * abs(vertex_pose.z - handoff.ground_pose.z)
    gm = handoff.deployment_graph
    covered = False
    if len(gm):
        if _tree is not None:
            d, _ = _tree.query(vertex_pose.position)
        else:
            d = float(np.min(np.linalg.norm(gm.positions() - vertex_pose.position, axis=1)))
        covered = d < cfg.cluster_radius
    return raw.volume * bonus * (cfg.covered_penalty if covered else 1.0)


class GainModulator:
    """Callable wrapper caching the deployment-graph KD-tree."""

    def __init__(self, handoff: HandoffPackage, cfg: MarsupialConfig):
        self.handoff = handoff
        self.cfg = cfg
        gm = handoff.deployment_graph
        self.tree = cKDTree(gm.positions()) if len(gm) else None

    def __call__(self, vertex) -> float:
        if vertex.gain is None:
            return 0.0
        return modulate_aerial_gain(vertex.gain, vertex.pose, self.handoff, self.cfg, self.tree)


# -- branch trigger ------------------------------------------------------------------

def branch_split(frontiers: list[Pose], min_separation: float, here: Pose | None = None,
                 min_angle: float = 0.0,
                 scores: list[float] | None = None,
                 min_gain_ratio: float = 0.0) -> tuple[Pose, Pose] | None:
    """Two frontiers at least ``min_separation`` apart (the most distant pair), or None.

    Used to deploy at a junction so the two robots can take different
    branches.  ``min_angle`` (degrees) is the smallest bearing difference
    between the pair as seen from ``here``.  With ``scores``, frontiers
    scoring below ``min_gain_ratio`` times the best score are ignored: those
    are corners and wall gaps rather than openings.
    """
    if scores is not None and frontiers:
        top = max(scores)
        frontiers = [f for f, s in zip(frontiers, scores) if s >= min_gain_ratio * top]
    if len(frontiers) < 2:
        return None
    best = None
    for i in range(len(frontiers)):
        for j in range(i + 1, len(frontiers)):
            d = frontiers[i].distance(frontiers[j])
            if here is not None and min_angle > 0.0:
                a = math.atan2(frontiers[i].y - here.y, frontiers[i].x - here.x)
                b = math.atan2(frontiers[j].y - here.y, frontiers[j].x - here.x)
                gap = abs((a - b + math.pi) % (2.0 * math.pi) - math.pi)
                if math.degrees(gap) < min_angle:
                    continue
            if d >= min_separation and (best is None or d > best[0]):
                best = (d, i, j)
    if best is None:
        return None
    return frontiers[best[1]], frontiers[best[2]]


def split_box(global_bbox, keep: Pose, other: Pose, margin: float = 1.0):
    """Horizontal half of ``global_bbox`` on ``keep``'s side of the bisector.

    The cut is perpendicular to the dominant axis of ``other - keep``, halfway
    between the two, widened by ``margin`` so the halves overlap.
    """
    lo = np.array(global_bbox[0], float)[:2]
    hi = np.array(global_bbox[1], float)[:2]
    a = np.array([keep.x, keep.y])
    b = np.array([other.x, other.y])
    ax = int(np.argmax(np.abs(b - a)))
    mid = 0.5 * (a[ax] + b[ax])
    if b[ax] >= a[ax]:
        hi[ax] = min(hi[ax], mid + margin)
    else:
        lo[ax] = max(lo[ax], mid - margin)
    return lo, hi


__all__ = [
    "MarsupialConfig", "DeploymentGraph", "DeploymentRegion", "HandoffPackage", "GainModulator",
    "update_deployment_graph", "identify_deployment_regions", "select_deployment", "make_handoff",
    "encode_handoff", "decode_handoff", "modulate_aerial_gain", "single_linkage", "eligible_vertices",
    "clip_bbox", "branch_split", "split_box",
]