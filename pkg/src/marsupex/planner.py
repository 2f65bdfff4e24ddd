"""Bifurcated graph-based exploration planning.

A dense local random graph is rebuilt around the robot at every iteration
and scored by volumetric gain; a sparse global graph accumulates selected
vertices and serves frontier re-positioning and homing.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .worldsim import (Pose, RobotSpec, SensorSpec, VoxelGrid, position_clear,
                       project_to_ground)


class PlannerError(RuntimeError):
    """Degenerate planning input (root in collision, no valid samples)."""


class PathError(RuntimeError):
    """Requested vertices are not connected."""


class GraphKind(str, Enum):
    LOCAL_GROUND = "local_ground"
    LOCAL_AERIAL = "local_aerial"
    GLOBAL_GROUND = "global_ground"
    GLOBAL_AERIAL = "global_aerial"
    DEPLOYMENT = "deployment"


@dataclass(frozen=True)
class VolumetricGain:
    unknown_voxels: int
    resolution: float

    @property
    def volume(self) -> float:
        return self.unknown_voxels * self.resolution ** 3


@dataclass
class PlannerParams:
    local_bbox: tuple[float, float, float] = (20.0, 20.0, 6.0)
    n_samples: int = 300
    edge_radius: float = 2.0
    gain_range: float | None = None
    completion_gain_threshold: float = 0.8
    path_gain_lambda: float = 0.15
    sample_attempts: int = 10
    global_connect_radius: float | None = None
    max_global_edges: int = 6
    unknown_support: bool = False

    def __post_init__(self):
        self.local_bbox = tuple(float(v) for v in self.local_bbox)
        if min(self.local_bbox) <= 0 or self.n_samples <= 0 or self.edge_radius <= 0:
            raise ValueError("local_bbox, n_samples and edge_radius must be positive")
        if self.completion_gain_threshold <= 0 or self.path_gain_lambda < 0:
            raise ValueError("completion_gain_threshold must be > 0 and lambda >= 0")
        if self.gain_range is not None and self.gain_range <= 0:
            raise ValueError("gain_range must be > 0")

    @property
    def connect_radius(self) -> float:
        return self.global_connect_radius or 2.0 * self.edge_radius


@dataclass
class Vertex:
    pose: Pose
    gain: VolumetricGain | None = None
    frontier: bool = False
    home: bool = False
    visited: bool = False
    score: float | None = None


class ExplorationGraph:
    """Undirected graph of poses with Euclidean edge weights."""

    def __init__(self, kind: GraphKind):
        self.kind = GraphKind(kind)
        self.vertices: dict[int, Vertex] = {}
        self.adj: dict[int, dict[int, float]] = {}
        self.root: int | None = None
        self._next = 0

    def __len__(self):
        return len(self.vertices)

    def add_vertex(self, pose: Pose, vid: int | None = None, **flags) -> int:
        if vid is None:
            vid = self._next
        if vid in self.vertices:
            raise ValueError(f"vertex {vid} exists")
        self._next = max(self._next, vid + 1)
        self.vertices[vid] = Vertex(pose, **flags)
        self.adj[vid] = {}
        if self.root is None:
            self.root = vid
        return vid

    def add_edge(self, a: int, b: int, weight: float | None = None) -> None:
        if a == b:
            return
        if weight is None:
            weight = self.vertices[a].pose.distance(self.vertices[b].pose)
        self.adj[a][b] = weight
        self.adj[b][a] = weight

    def remove_vertex(self, vid: int) -> None:
        for n in self.adj.pop(vid):
            del self.adj[n][vid]
        del self.vertices[vid]
        if self.root == vid:
            self.root = min(self.vertices) if self.vertices else None

    def has_edge(self, a: int, b: int) -> bool:
        return b in self.adj.get(a, {})

    def edges(self):
        for a in sorted(self.adj):
            for b in sorted(self.adj[a]):
                if a < b:
                    yield a, b, self.adj[a][b]

    def ids(self) -> list[int]:
        return sorted(self.vertices)

    def pose(self, vid: int) -> Pose:
        return self.vertices[vid].pose

    def positions(self, ids=None) -> np.ndarray:
        ids = self.ids() if ids is None else ids
        if not ids:
            return np.zeros((0, 3))
        return np.array([self.vertices[i].pose.position for i in ids])

    def home_id(self) -> int | None:
        for vid in self.ids():
            if self.vertices[vid].home:
                return vid
        return None

    def nearest(self, p, *, ids=None) -> int | None:
        ids = self.ids() if ids is None else list(ids)
        if not ids:
            return None
        d = np.linalg.norm(self.positions(ids) - np.asarray(p, float), axis=1)
        return ids[int(np.argmin(d))]  # argmin returns the first minimum -> smallest id

    def component(self, start: int) -> set[int]:
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v in self.adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    def copy(self) -> "ExplorationGraph":
        g = ExplorationGraph(self.kind)
        for vid in self.ids():
            v = self.vertices[vid]
            g.vertices[vid] = Vertex(v.pose, v.gain, v.frontier, v.home, v.visited, v.score)
            g.adj[vid] = dict(self.adj[vid])
        g.root = self.root
        g._next = self._next
        return g

    # -- text export ---------------------------------------------------------
    def to_text(self) -> str:
        lines = [f"# kind {self.kind.value}"]
        for vid in self.ids():
            v = self.vertices[vid]
            p = v.pose
            gain = v.gain.unknown_voxels if v.gain is not None else -1
            flags = "".join(c for c, on in (("F", v.frontier), ("H", v.home), ("X", v.visited)) if on) or "-"
            lines.append(f"V {vid} {p.x:.6f} {p.y:.6f} {p.z:.6f} {gain} {flags} {p.yaw:.6f}")
        for a, b, w in self.edges():
            lines.append(f"E {a} {b} {w:.6f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, resolution: float) -> "ExplorationGraph":
        g = None
        for line in text.splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "#" and parts[1] == "kind":
                g = cls(GraphKind(parts[2]))
            elif parts[0] == "V":
                vid, x, y, z, gain, flags = int(parts[1]), *map(float, parts[2:5]), int(parts[5]), parts[6]
                yaw = float(parts[7]) if len(parts) > 7 else 0.0
                g.add_vertex(Pose(x, y, z, yaw), vid,
                             gain=VolumetricGain(gain, resolution) if gain >= 0 else None,
                             frontier="F" in flags, home="H" in flags, visited="X" in flags)
            elif parts[0] == "E":
                g.add_edge(int(parts[1]), int(parts[2]), float(parts[3]))
        if g is None:
            raise ValueError("graph text lacks a kind header")
        if g.vertices:
            g.root = min(g.vertices)
        return g


# -- gain ------------------------------------------------------------------------

def evaluate_gain(grid: VoxelGrid, pose: Pose, sensor: SensorSpec,
                  gain_range: float | None = None) -> VolumetricGain:
    """Unknown voxels inside the sensor cone and range with an unoccluded line of sight."""
    return evaluate_gains(grid, [pose], sensor, gain_range)[0]


def evaluate_gains(grid: VoxelGrid, poses, sensor: SensorSpec,
                   gain_range: float | None = None) -> list[VolumetricGain]:
    poses = list(poses)
    if not poses:
        return []
    for p in poses:
        if not grid.contains(p.position):
            raise PlannerError(f"gain pose {p} outside map")
    rng = float(gain_range if gain_range is not None else sensor.max_range)
    cos_h, full_h, tan_v, full_v = sensor.cone()
    positions = np.ascontiguousarray([p.position for p in poses], dtype=float)
    yaws = np.array([p.yaw for p in poses], dtype=float)
    counts = kernels.gain_many(grid.cells, grid.clearance(), True, grid.origin, grid.resolution,
                               positions, yaws, cos_h, full_h, tan_v, full_v, rng)
    return [VolumetricGain(int(c), grid.resolution) for c in counts]


# -- graph search ----------------------------------------------------------------

def _lex_less(pred: dict, a_tail: int, a_last: int, b_last: int) -> bool:
    """Is path(a_tail)+[a_last] lexicographically smaller than path(b_last)?"""
    def chain(v):
        out = []
        while v is not None:
            out.append(v)
            v = pred[v]
        return out[::-1]
    return chain(a_tail) + [a_last] < chain(b_last)


def dijkstra(graph: ExplorationGraph, source: int):
    """Distances and predecessors from ``source``; equal-length ties resolve to
    the lexicographically smallest vertex-id sequence."""
    dist = {source: 0.0}
    pred: dict[int, int | None] = {source: None}
    done = set()
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v in sorted(graph.adj[u]):
            if v in done:
                continue
            nd = d + graph.adj[u][v]
            old = dist.get(v)
            if old is None or nd < old:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
            elif nd == old and _lex_less(pred, u, v, v):
                pred[v] = u
    return dist, pred


def _trace(pred, v) -> list[int]:
    out = []
    while v is not None:
        out.append(v)
        v = pred[v]
    return out[::-1]


def shortest_path(graph: ExplorationGraph, start: int, goal: int) -> tuple[list[Pose], float]:
    """Minimal-weight path as poses (start excluded) and its length."""
    if start not in graph.vertices or goal not in graph.vertices:
        raise PathError(f"unknown vertex {start if start not in graph.vertices else goal}")
    if start == goal:
        return [], 0.0
    dist, pred = dijkstra(graph, start)
    if goal not in dist:
        raise PathError(f"vertex {goal} unreachable from {start}")
    ids = _trace(pred, goal)
    return [graph.pose(v) for v in ids[1:]], dist[goal]


def shortest_path_ids(graph: ExplorationGraph, start: int, goal: int) -> tuple[list[int], float]:
    if start == goal:
        return [start], 0.0
    dist, pred = dijkstra(graph, start)
    if goal not in dist:
        raise PathError(f"vertex {goal} unreachable from {start}")
    return _trace(pred, goal), dist[goal]


def auto_home(graph: ExplorationGraph, current: int) -> list[Pose]:
    home = graph.home_id()
    if home is None:
        raise PathError("graph has no home vertex")
    return shortest_path(graph, current, home)[0]


# -- local stage -----------------------------------------------------------------

def _box_around(grid: VoxelGrid, root: Pose, extent, clip=None):
    half = np.asarray(extent, float) / 2.0
    lo = np.maximum(root.position - half, grid.origin)
    hi = np.minimum(root.position + half, grid.upper)
    if clip is not None:
        lo = np.maximum(lo, clip[0])
        hi = np.minimum(hi, clip[1])
    return lo, hi


def _edge_ok(grid: VoxelGrid, a: np.ndarray, b: np.ndarray, robot: RobotSpec, unknown_support: bool) -> bool:
    if robot.is_ground:
        return bool(kernels.ground_clear(grid.cells, grid.origin, grid.resolution, a, b,
                                         float(robot.body_height), float(robot.max_step_height),
                                         float(robot.collision_radius), True, unknown_support,
                                         float(robot.support_depth)))
    return bool(kernels.capsule_clear(grid.cells, grid.origin, grid.resolution, a, b,
                                      float(robot.collision_radius), True))


def build_local_graph(grid: VoxelGrid, root: Pose, robot: RobotSpec, params: PlannerParams,
                      rng: np.random.Generator, clip_box=None) -> ExplorationGraph:
    """Random graph inside the local box, pruned to the root's component.

    ``clip_box`` (lo, hi) further restricts sampling, e.g. to a handoff box.
    """
    if not position_clear(grid, root, robot):
        raise PlannerError(f"root {root} in collision")
    kind = GraphKind.LOCAL_GROUND if robot.is_ground else GraphKind.LOCAL_AERIAL
    g = ExplorationGraph(kind)
    g.add_vertex(root)
    lo, hi = _box_around(grid, root, params.local_bbox, clip_box)
    if (hi <= lo).any():
        raise PlannerError("local box is empty")
    accepted = 0
    for _ in range(params.n_samples * params.sample_attempts):
        if accepted >= params.n_samples:
            break
        p = rng.uniform(lo, hi)
        if robot.is_ground:
            pose = project_to_ground(grid, p[0], p[1], p[2], robot, unknown_support=params.unknown_support)
            if pose is None or (pose.position < lo).any() or (pose.position > hi).any():
                continue
        else:
            pose = Pose(p[0], p[1], p[2])
            if not position_clear(grid, pose, robot):
                continue
        yaw = math.atan2(pose.y - root.y, pose.x - root.x)
        g.add_vertex(Pose(pose.x, pose.y, pose.z, yaw))
        accepted += 1
    if accepted == 0:
        raise PlannerError("no valid samples in local box")
    ids = g.ids()
    pos = g.positions(ids)
    tree = cKDTree(pos)
    for a, b in sorted(tree.query_pairs(params.edge_radius)):
        if _edge_ok(grid, pos[a], pos[b], robot, params.unknown_support):
            g.add_edge(ids[a], ids[b])
    keep = g.component(g.root)
    for vid in ids:
        if vid not in keep:
            g.remove_vertex(vid)
    return g


def score_gains(graph: ExplorationGraph, grid: VoxelGrid, sensor: SensorSpec,
                params: PlannerParams, ids=None) -> None:
    """Fill vertex gains (and reset scores) in place."""
    ids = graph.ids() if ids is None else list(ids)
    gains = evaluate_gains(grid, [graph.pose(v) for v in ids], sensor, params.gain_range)
    for vid, gn in zip(ids, gains):
        graph.vertices[vid].gain = gn
        graph.vertices[vid].score = None


def vertex_score(v: Vertex) -> float:
    if v.score is not None:
        return v.score
    return v.gain.volume if v.gain is not None else 0.0


def best_local_path(graph: ExplorationGraph, params: PlannerParams) -> tuple[list[Pose], float, list[int]]:
    """Root path maximizing the distance-discounted accumulated gain.

    Returns (poses after the root, path gain, vertex ids including root).
    """
    root = graph.root
    dist, pred = dijkstra(graph, root)
    value = {}
    best, best_val = root, -math.inf
    for v in sorted(dist, key=lambda x: (dist[x], x)):
        own = vertex_score(graph.vertices[v]) * math.exp(-params.path_gain_lambda * dist[v])
        value[v] = own + (value[pred[v]] if pred[v] is not None else 0.0)
    for v in sorted(value):
        if value[v] > best_val:
            best, best_val = v, value[v]
    ids = _trace(pred, best)
    return [graph.pose(v) for v in ids[1:]], best_val, ids


def local_completion(graph: ExplorationGraph, params: PlannerParams) -> bool:
    return best_local_path(graph, params)[1] < params.completion_gain_threshold


# -- global stage ----------------------------------------------------------------

class _Attacher:
    def __init__(self, graph, grid, robot, params):
        self.g = graph
        self.grid = grid
        self.robot = robot
        self.params = params
        self.spacing = params.edge_radius / 2.0

    def _ok(self, a, b):
        return _edge_ok(self.grid, self.g.pose(a).position, self.g.pose(b).position,
                        self.robot, self.params.unknown_support)

    def attach(self, pose: Pose, prev: int | None, **flags) -> int | None:
        g = self.g
        ids = g.ids()
        if ids:
            pos = g.positions(ids)
            d = np.linalg.norm(pos - pose.position, axis=1)
            close = np.flatnonzero(d < self.spacing)
            if close.size:
                vid = ids[int(close[np.argmin(d[close])])]
                if prev is not None and prev != vid and not g.has_edge(prev, vid) and self._ok(prev, vid):
                    g.add_edge(prev, vid)
                return vid
        vid = g.add_vertex(pose, **flags)
        made = 0
        if ids:
            order = sorted((float(di), i) for di, i in zip(d, ids) if di <= self.params.connect_radius)
            for _, other in order:
                if made >= self.params.max_global_edges:
                    break
                if self._ok(vid, other):
                    g.add_edge(vid, other)
                    made += 1
            if prev is not None and not g.has_edge(prev, vid) and self._ok(prev, vid):
                g.add_edge(prev, vid)
                made += 1
            if made == 0:
                g.remove_vertex(vid)
                return prev
        return vid


def update_global_graph(global_graph: ExplorationGraph, local: ExplorationGraph | None,
                        executed_path: list[Pose], params: PlannerParams,
                        grid: VoxelGrid, robot: RobotSpec) -> ExplorationGraph:
    """Append the executed path and root paths to high-gain local vertices, sparsified."""
    att = _Attacher(global_graph, grid, robot, params)
    prev = None
    for pose in executed_path:
        prev = att.attach(pose, prev)
    if local is not None and len(local):
        dist, pred = dijkstra(local, local.root)
        cands = [v for v in sorted(dist) if local.vertices[v].gain is not None
                 and local.vertices[v].gain.volume > params.completion_gain_threshold]
        for v in cands:
            prev = None
            chain = _trace(pred, v)
            for u in chain:
                prev = att.attach(local.pose(u), prev)
            if prev is not None and global_graph.pose(prev).distance(local.pose(v)) < att.spacing:
                gv = global_graph.vertices[prev]
                if gv.gain is None and not gv.visited:
                    gv.gain = local.vertices[v].gain
                    gv.frontier = True
    return global_graph


def mark_visited(graph: ExplorationGraph, pose: Pose, radius: float) -> None:
    for vid in graph.ids():
        v = graph.vertices[vid]
        if v.pose.distance(pose) < radius:
            v.visited = True
            v.frontier = False


def detect_frontiers(graph: ExplorationGraph, grid: VoxelGrid, robot: RobotSpec,
                     params: PlannerParams, reference: Pose | None = None,
                     sensor: SensorSpec | None = None, weight=None) -> list[int]:
    """Refresh candidate gains and return frontier ids by priority.

    Gains never grow as a map fills in, so only vertices still flagged (or
    never scored) are re-evaluated.  ``weight(vertex) -> float`` may rescale
    gains (aerial modulation) before thresholding.
    """
    sensor = sensor or robot.sensor
    home = graph.home_id()
    reach = graph.component(home) if home is not None else set(graph.ids())
    stale = [v for v in graph.ids() if v in reach and not graph.vertices[v].visited
             and (graph.vertices[v].frontier or graph.vertices[v].gain is None)]
    if stale:
        score_gains(graph, grid, sensor, params, stale)
    out = []
    for vid in stale:
        v = graph.vertices[vid]
        s = weight(v) if weight is not None else v.gain.volume
        v.score = s
        v.frontier = s >= params.completion_gain_threshold
        if v.frontier:
            out.append(vid)
    ref = reference.position if reference is not None else None

    def key(vid):
        v = graph.vertices[vid]
        d = float(np.linalg.norm(v.pose.position - ref)) if ref is not None else 0.0
        return (-v.score, d, vid)

    return sorted(out, key=key)
