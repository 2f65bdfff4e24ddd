"""Small world builders shared by the tests."""
from __future__ import annotations

import numpy as np

from marsupex.worldsim import FREE, OCCUPIED, VoxelGrid


def box_room(nx: int, ny: int, nz: int, res: float = 0.25) -> VoxelGrid:
    """Free interior of nx*ny*nz voxels inside a one-voxel occupied shell; floor top at z=0."""
    g = VoxelGrid((-res, -res, -res), res, (nx + 2, ny + 2, nz + 2), fill=FREE)
    c = g.cells
    c[0], c[-1] = OCCUPIED, OCCUPIED
    c[:, 0], c[:, -1] = OCCUPIED, OCCUPIED
    c[:, :, 0], c[:, :, -1] = OCCUPIED, OCCUPIED
    return g


def fill_box(g: VoxelGrid, lo, hi, state: int = OCCUPIED) -> VoxelGrid:
    """Set every voxel whose center lies in [lo, hi] (metres)."""
    idx = np.indices(g.dims).reshape(3, -1).T
    c = g.center_of(idx)
    m = np.all((c >= np.asarray(lo) - 1e-9) & (c <= np.asarray(hi) + 1e-9), axis=1)
    g.cells[tuple(idx[m].T)] = state
    g.touch()
    return g


def cluttered(rng: np.random.Generator, shape, density: float, res: float = 0.25,
              unknown: float = 0.0) -> VoxelGrid:
    """Random blobs of occupied cells (and optionally unknown cells) in a free grid."""
    cells = np.full(shape, FREE, np.uint8)
    r = rng.random(shape)
    cells[r < density] = OCCUPIED
    if unknown:
        cells[(r >= density) & (r < density + unknown)] = 0
    return VoxelGrid((0.0, 0.0, 0.0), res, shape, cells)


def free_point(rng: np.random.Generator, g: VoxelGrid, margin: int = 1) -> np.ndarray:
    """A random non-lattice point inside a free voxel away from the border."""
    while True:
        idx = [int(rng.integers(margin, d - margin)) for d in g.dims]
        if g.cells[tuple(idx)] == FREE:
            return g.origin + (np.array(idx) + rng.uniform(0.05, 0.95, 3)) * g.resolution


def structured_world(res: float = 0.25) -> VoxelGrid:
    """A 25 x 15 x 5 m hall split by a doorway wall, with pillars and a half-height partition."""
    g = VoxelGrid((-1.0, -1.0, -1.0), res, (100, 60, 20), fill=FREE)
    c = g.cells
    c[0], c[-1] = OCCUPIED, OCCUPIED
    c[:, 0], c[:, -1] = OCCUPIED, OCCUPIED
    c[:, :, 0], c[:, :, -1] = OCCUPIED, OCCUPIED
    c[30:32, 0:25] = OCCUPIED
    c[30:32, 35:60] = OCCUPIED
    c[60:64, 20:24] = OCCUPIED
    c[15:18, 40:44] = OCCUPIED
    c[70:72, 30:60, :10] = OCCUPIED
    g.touch()
    return g


def feature_map(g: VoxelGrid, poses, sensor):
    """A unified map built from noiseless scans at ``poses``."""
    from marsupex.mapstore import UnifiedMap, extract_features
    from marsupex.worldsim import raycast_scan

    m = UnifiedMap(resolution=g.resolution)
    for p in poses:
        pts, labels = extract_features(raycast_scan(g, p, sensor), p)
        m.insert_points(pts, labels)
    return m


GROUND_VIEWS = ((3.0, 5.0, 0.5, 0.0), (10.0, 7.0, 0.5, 0.3), (15.0, 5.0, 0.5, 1.0),
                (20.0, 8.0, 0.5, 2.5), (6.0, 11.0, 0.5, -1.2))
TRUTHS = ((10.0, 7.2, 0.9, 0.3), (5.0, 5.5, 1.2, -0.4), (16.0, 6.0, 1.0, 1.1),
          (20.5, 7.5, 0.8, 2.7), (12.0, 4.0, 1.0, 0.8), (4.0, 9.0, 1.0, 0.5),
          (9.0, 3.0, 1.2, 1.5), (18.0, 10.0, 1.0, -2.0), (14.0, 9.0, 1.2, 0.0),
          (3.0, 3.0, 0.8, 0.8), (22.0, 4.0, 1.0, 2.0), (8.0, 7.0, 1.0, -0.5),
          (7.0, 10.0, 1.5, -1.0))


def registration_trials(n: int, seed: int = 0):
    """Yield (truth, scan, init, map) for ``n`` uniformly perturbed registrations."""
    import math

    from marsupex.worldsim import Pose, RobotSpec, raycast_scan

    rng = np.random.default_rng(seed)
    g = structured_world()
    m = feature_map(g, [Pose(*v) for v in GROUND_VIEWS], RobotSpec.ground().sensor)
    sensor = RobotSpec.aerial().sensor
    scans = {t: raycast_scan(g, Pose(*t), sensor) for t in TRUTHS}
    for _ in range(n):
        t = TRUTHS[int(rng.integers(len(TRUTHS)))]
        d = rng.uniform(-1.0, 1.0, 4) * [0.3, 0.3, 0.1, math.radians(5.0)]
        truth = Pose(*t)
        yield truth, scans[t], Pose(t[0] + d[0], t[1] + d[1], t[2] + d[2], t[3] + d[3]), m


def random_graph(rng: np.random.Generator, n: int, p: float = 0.35, integer: bool = False):
    """Random undirected graph on ``n`` poses; integer weights force length ties."""
    from marsupex.planner import ExplorationGraph, GraphKind
    from marsupex.worldsim import Pose

    g = ExplorationGraph(GraphKind.GLOBAL_GROUND)
    for _ in range(n):
        g.add_vertex(Pose(*rng.uniform(0, 10, 3)))
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < p:
                w = float(rng.integers(1, 4)) if integer else None
                g.add_edge(a, b, w)
    return g
