"""Ternary voxel worlds, simulated LiDAR, scan integration and traversability."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .kernels import FREE, OCCUPIED, UNKNOWN

STATE_NAMES = {UNKNOWN: "unknown", FREE: "free", OCCUPIED: "occupied"}


class WorldError(ValueError):
    """Raised for out-of-bounds queries and malformed grids."""


def wrap_angle(a: float) -> float:
    """Map an angle into (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, p, yaw: float = 0.0) -> "Pose":
        return cls(float(p[0]), float(p[1]), float(p[2]), yaw)

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: express ``other`` (given in this pose's frame) in the parent frame."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose(self.x + c * other.x - s * other.y,
                    self.y + s * other.x + c * other.y,
                    self.z + other.z,
                    self.yaw + other.yaw)

    def inverse(self) -> "Pose":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose(-(c * self.x + s * self.y), -(-s * self.x + c * self.y), -self.z, -self.yaw)

    def distance(self, other: "Pose") -> float:
        return math.dist((self.x, self.y, self.z), (other.x, other.y, other.z))

    def to_world(self, pts: np.ndarray) -> np.ndarray:
        """Rotate by yaw and translate points given in this pose's frame."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        pts = np.asarray(pts, dtype=float)
        out = np.empty_like(pts)
        out[..., 0] = c * pts[..., 0] - s * pts[..., 1] + self.x
        out[..., 1] = s * pts[..., 0] + c * pts[..., 1] + self.y
        out[..., 2] = pts[..., 2] + self.z
        return out

    def to_local(self, pts: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        d = np.asarray(pts, dtype=float) - self.position
        out = np.empty_like(d)
        out[..., 0] = c * d[..., 0] + s * d[..., 1]
        out[..., 1] = -s * d[..., 0] + c * d[..., 1]
        out[..., 2] = d[..., 2]
        return out


@dataclass(frozen=True)
class SensorSpec:
    fov_h: float = 360.0
    fov_v: float = 30.0
    max_range: float = 20.0
    rays_h: int = 180
    rays_v: int = 16

    def __post_init__(self):
        if not 0.0 < self.fov_h <= 360.0:
            raise ValueError(f"fov_h must be in (0, 360], got {self.fov_h}")
        if not 0.0 < self.fov_v <= 180.0:
            raise ValueError(f"fov_v must be in (0, 180], got {self.fov_v}")
        if self.max_range <= 0.0:
            raise ValueError(f"max_range must be > 0, got {self.max_range}")
        if self.rays_h < 1 or self.rays_v < 1:
            raise ValueError("rays_h and rays_v must be >= 1")

    def ray_directions(self) -> np.ndarray:
        """Unit directions in the sensor frame, shape (rays_v, rays_h, 3).

        Rows are rings (constant elevation), columns run in azimuth order.
        """
        h = math.radians(self.fov_h)
        az = -h / 2 + h * (np.arange(self.rays_h) + 0.5) / self.rays_h
        if self.rays_v == 1:
            el = np.zeros(1)
        else:
            v = math.radians(self.fov_v)
            el = np.linspace(-v / 2, v / 2, self.rays_v)
        ce, se = np.cos(el)[:, None], np.sin(el)[:, None]
        d = np.empty((self.rays_v, self.rays_h, 3))
        d[..., 0] = ce * np.cos(az)[None, :]
        d[..., 1] = ce * np.sin(az)[None, :]
        d[..., 2] = np.broadcast_to(se, (self.rays_v, self.rays_h))
        return d

    def cone(self) -> tuple[float, bool, float, bool]:
        """(cos half-h, full-h, tan half-v, full-v) as consumed by the gain kernel."""
        full_h = self.fov_h >= 360.0
        full_v = self.fov_v >= 180.0
        cos_h = math.cos(math.radians(self.fov_h) / 2)
        tan_v = math.tan(math.radians(self.fov_v) / 2) if not full_v else math.inf
        return cos_h, full_h, tan_v, full_v


class RobotKind(str, Enum):
    GROUND = "ground"
    AERIAL = "aerial"


@dataclass(frozen=True)
class RobotSpec:
    kind: RobotKind
    sensor: SensorSpec
    nominal_speed: float
    endurance: float
    collision_radius: float = 0.3
    max_step_height: float | None = None
    body_height: float = 0.5
    support_depth: float = 1.5

    def __post_init__(self):
        if self.nominal_speed <= 0 or self.endurance <= 0 or self.collision_radius <= 0:
            raise ValueError("speed, endurance and collision_radius must be > 0")
        if self.kind == RobotKind.GROUND and (self.max_step_height is None or self.max_step_height < 0):
            raise ValueError("ground robots need max_step_height >= 0")

    @classmethod
    def ground(cls, **kw) -> "RobotSpec":
        sensor = kw.pop("sensor", SensorSpec(360.0, 30.0, 20.0, 180, 16))
        kw.setdefault("max_step_height", 0.3)
        return cls(RobotKind.GROUND, sensor, kw.pop("nominal_speed", 0.7),
                   kw.pop("endurance", 3600.0), **kw)

    @classmethod
    def aerial(cls, **kw) -> "RobotSpec":
        sensor = kw.pop("sensor", SensorSpec(360.0, 90.0, 20.0, 180, 32))
        return cls(RobotKind.AERIAL, sensor, kw.pop("nominal_speed", 1.0),
                   kw.pop("endurance", 720.0), **kw)

    @property
    def is_ground(self) -> bool:
        return self.kind == RobotKind.GROUND


class VoxelGrid:
    """Regular 3D lattice of ternary cells; ``origin`` is the min corner."""

    def __init__(self, origin, resolution: float, dims, cells: np.ndarray | None = None,
                 fill: int = UNKNOWN):
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        self.resolution = float(resolution)
        dims = tuple(int(d) for d in dims)
        if self.resolution <= 0:
            raise WorldError("resolution must be > 0")
        if len(dims) != 3 or min(dims) <= 0:
            raise WorldError(f"dims must be three positive counts, got {dims}")
        if cells is None:
            cells = np.full(dims, fill, dtype=np.uint8)
        elif cells.shape != dims:
            raise WorldError(f"cells shape {cells.shape} != dims {dims}")
        self.cells = np.ascontiguousarray(cells, dtype=np.uint8)
        self.version = 0
        self._clearance = None
        self._clearance_version = -1

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.cells.shape

    @property
    def upper(self) -> np.ndarray:
        return self.origin + np.asarray(self.dims) * self.resolution

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(self.origin, self.resolution, self.dims, self.cells.copy())

    def blank(self) -> "VoxelGrid":
        """All-unknown grid on the same lattice (a fresh robot map)."""
        return VoxelGrid(self.origin, self.resolution, self.dims)

    def index_of(self, p) -> tuple[int, int, int]:
        g = np.floor((np.asarray(p, dtype=float) - self.origin) / self.resolution).astype(int)
        return int(g[0]), int(g[1]), int(g[2])

    def center_of(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.resolution

    def contains(self, p) -> bool:
        i = self.index_of(p)
        return all(0 <= a < n for a, n in zip(i, self.dims))

    def state_at(self, p) -> int:
        if not self.contains(p):
            raise WorldError(f"point {tuple(p)} outside grid")
        return int(self.cells[self.index_of(p)])

    def count(self, state: int) -> int:
        return int(np.count_nonzero(self.cells == state))

    def touch(self) -> None:
        self.version += 1

    def clearance(self) -> np.ndarray:
        """Distance (m) from each voxel center to the nearest occupied center."""
        if self._clearance_version != self.version or self._clearance is None:
            from scipy import ndimage

            occ = self.cells == OCCUPIED
            if occ.any():
                d = ndimage.distance_transform_edt(~occ) * self.resolution
            else:
                d = np.full(self.dims, 1e9)
            self._clearance = np.ascontiguousarray(d, dtype=np.float64)
            self._clearance_version = self.version
        return self._clearance

    def __eq__(self, other):
        return (isinstance(other, VoxelGrid) and np.array_equal(self.origin, other.origin)
                and self.resolution == other.resolution and np.array_equal(self.cells, other.cells))


@dataclass
class ScanPointCloud:
    """One LiDAR sweep in the sensor frame.

    ``dirs``/``hit``/``points``/``ranges`` are laid out (rays_v, rays_h, ...)
    so neighbours along a ring are adjacent columns.  Misses carry NaN points.
    """

    dirs: np.ndarray
    hit: np.ndarray
    points: np.ndarray
    ranges: np.ndarray
    max_range: float
    closed: bool = True

    @property
    def n_rings(self) -> int:
        return self.hit.shape[0]

    def valid_points(self) -> np.ndarray:
        return self.points[self.hit]


def _check_inside(world: VoxelGrid, pose: Pose) -> None:
    if not world.contains(pose.position):
        raise WorldError(f"pose {pose} outside world bounds")


def raycast_scan(world: VoxelGrid, pose: Pose, sensor: SensorSpec) -> ScanPointCloud:
    _check_inside(world, pose)
    dirs_s = sensor.ray_directions()
    shape = dirs_s.shape[:2]
    dirs_w = pose.to_world(dirs_s) - pose.position
    flat = np.ascontiguousarray(dirs_w.reshape(-1, 3))
    hit, vox, _ = kernels.raycast(world.cells, world.origin, world.resolution,
                                  pose.position, flat, float(sensor.max_range))
    pts_w = np.full((flat.shape[0], 3), np.nan)
    pts_w[hit] = world.center_of(vox[hit])
    pts_s = np.full_like(pts_w, np.nan)
    pts_s[hit] = pose.to_local(pts_w[hit])
    ranges = np.full(flat.shape[0], np.nan)
    ranges[hit] = np.linalg.norm(pts_s[hit], axis=1)
    return ScanPointCloud(dirs_s, hit.reshape(shape), pts_s.reshape(shape + (3,)),
                          ranges.reshape(shape), float(sensor.max_range), sensor.fov_h >= 360.0)


def integrate_scan(grid: VoxelGrid, pose: Pose, scan: ScanPointCloud) -> int:
    """Fold a scan into ``grid`` in place; returns voxels that left Unknown."""
    _check_inside(grid, pose)
    flat_dirs = np.ascontiguousarray((pose.to_world(scan.dirs) - pose.position).reshape(-1, 3))
    hit = np.ascontiguousarray(scan.hit.reshape(-1))
    vox = np.full((hit.size, 3), -1, dtype=np.int64)
    if hit.any():
        pts_w = pose.to_world(scan.points.reshape(-1, 3)[hit])
        vox[hit] = np.floor((pts_w - grid.origin) / grid.resolution).astype(np.int64)
    n = kernels.integrate(grid.cells, grid.origin, grid.resolution, pose.position,
                          flat_dirs, hit, vox, float(scan.max_range))
    if n:
        grid.touch()
    return int(n)


def reveal_from(grid: VoxelGrid, truth: VoxelGrid, mask: np.ndarray) -> int:
    """Copy ground truth into ``grid`` where ``mask`` is set and grid is unknown."""
    sel = mask & (grid.cells == UNKNOWN)
    n = int(np.count_nonzero(sel))
    if n:
        grid.cells[sel] = truth.cells[sel]
        grid.touch()
    return n


def body_mask(grid: VoxelGrid, pose: Pose, radius: float, below: float = 0.0) -> np.ndarray:
    """Voxels whose centers lie within ``radius`` of ``pose`` (a vertical cylinder
    extends the sphere down by ``below`` metres)."""
    res = grid.resolution
    p = pose.position
    lo = np.maximum(np.floor((p - radius - np.array([0, 0, below]) - grid.origin) / res).astype(int), 0)
    hi = np.minimum(np.floor((p + radius - grid.origin) / res).astype(int), np.asarray(grid.dims) - 1)
    mask = np.zeros(grid.dims, dtype=bool)
    if (hi < lo).any():
        return mask
    sl = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
    ii, jj, kk = np.meshgrid(*(np.arange(a, b + 1) for a, b in zip(lo, hi)), indexing="ij")
    c = grid.origin + (np.stack([ii, jj, kk], -1) + 0.5) * res
    dxy2 = (c[..., 0] - p[0]) ** 2 + (c[..., 1] - p[1]) ** 2
    dz = c[..., 2] - p[2]
    inside = dxy2 + dz * dz <= radius * radius
    if below > 0:
        inside |= (dxy2 <= radius * radius) & (dz <= 0) & (dz >= -below)
    mask[sl] = inside
    return mask


def traversable(grid: VoxelGrid, start: Pose, goal: Pose, robot: RobotSpec, *,
                unknown_blocks: bool = True, unknown_support: bool = False) -> bool:
    """Whether ``robot`` can move straight from ``start`` to ``goal`` in ``grid``.

    Aerial robots need a collision-free capsule.  Ground robots additionally
    need continuous support below a footprint swept at voxel spacing, with
    support height changing by at most ``max_step_height`` per sample.
    """
    for p in (start, goal):
        if not grid.contains(p.position):
            raise WorldError(f"pose {p} outside grid")
    if robot.is_ground:
        return bool(kernels.ground_clear(
            grid.cells, grid.origin, grid.resolution, start.position, goal.position,
            float(robot.body_height), float(robot.max_step_height), float(robot.collision_radius),
            unknown_blocks, unknown_support, float(robot.support_depth)))
    return bool(kernels.capsule_clear(grid.cells, grid.origin, grid.resolution, start.position,
                                      goal.position, float(robot.collision_radius), unknown_blocks))


def project_to_ground(grid: VoxelGrid, x: float, y: float, z: float, robot: RobotSpec, *,
                      unknown_blocks: bool = True, unknown_support: bool = False) -> Pose | None:
    """Drop a body-center sample onto the support below it; None if unsupported or blocked."""
    top = kernels.support_top(grid.cells, grid.origin, grid.resolution, x, y, z,
                              robot.body_height + robot.support_depth, unknown_support)
    if math.isnan(top):
        return None
    pose = Pose(x, y, top + robot.body_height)
    if not grid.contains(pose.position):
        return None
    p = pose.position
    if not kernels.capsule_clear(grid.cells, grid.origin, grid.resolution, p, p,
                                 float(robot.collision_radius), unknown_blocks):
        return None
    return pose


def position_clear(grid: VoxelGrid, pose: Pose, robot: RobotSpec, *, unknown_blocks: bool = True) -> bool:
    if not grid.contains(pose.position):
        return False
    p = pose.position
    return bool(kernels.capsule_clear(grid.cells, grid.origin, grid.resolution, p, p,
                                      float(robot.collision_radius), unknown_blocks))


# -- exports -----------------------------------------------------------------

def export_voxels(grid: VoxelGrid, include_unknown: bool = False) -> str:
    """Line-oriented voxel dump: ``x y z state`` with voxel-center coordinates."""
    lines = [
        f"# origin {grid.origin[0]:.4f} {grid.origin[1]:.4f} {grid.origin[2]:.4f}",
        f"# resolution {grid.resolution:.4f}",
        f"# dims {grid.dims[0]} {grid.dims[1]} {grid.dims[2]}",
    ]
    sel = np.ones(grid.dims, bool) if include_unknown else grid.cells != UNKNOWN
    idx = np.argwhere(sel)
    centres = grid.center_of(idx)
    states = grid.cells[sel]
    for (x, y, z), s in zip(centres, states):
        lines.append(f"{x:.4f} {y:.4f} {z:.4f} {STATE_NAMES[int(s)]}")
    return "\n".join(lines) + "\n"


def parse_voxels(text: str) -> VoxelGrid:
    header = {}
    rows = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, *vals = line[1:].split()
            header[key] = [float(v) for v in vals]
        elif line.strip():
            x, y, z, s = line.split()
            rows.append((float(x), float(y), float(z), s))
    grid = VoxelGrid(header["origin"], header["resolution"][0], [int(d) for d in header["dims"]])
    lookup = {v: k for k, v in STATE_NAMES.items()}
    for x, y, z, s in rows:
        grid.cells[grid.index_of((x, y, z))] = lookup[s]
    return grid


_FACES = (
    ((1, 0, 0), ((1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1))),
    ((-1, 0, 0), ((0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0))),
    ((0, 1, 0), ((0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0))),
    ((0, -1, 0), ((0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1))),
    ((0, 0, 1), ((0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1))),
    ((0, 0, -1), ((0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0))),
)


def export_surface(grid: VoxelGrid, name: str = "map") -> str:
    """ASCII STL of every occupied-voxel face that borders a non-occupied cell."""
    occ = grid.cells == OCCUPIED
    padded = np.pad(occ, 1, constant_values=False)
    out = [f"solid {name}"]
    res = grid.resolution
    for normal, quad in _FACES:
        shifted = padded[tuple(slice(1 + n, padded.shape[a] - 1 + n) for a, n in enumerate(normal))]
        exposed = np.argwhere(occ & ~shifted)
        for idx in exposed:
            corners = [grid.origin + (idx + np.array(c)) * res for c in quad]
            for tri in ((0, 1, 2), (0, 2, 3)):
                out.append(f"facet normal {normal[0]} {normal[1]} {normal[2]}")
                out.append("outer loop")
                for t in tri:
                    c = corners[t]
                    out.append(f"vertex {c[0]:.4f} {c[1]:.4f} {c[2]:.4f}")
                out.append("endloop")
                out.append("endfacet")
    out.append(f"endsolid {name}")
    return "\n".join(out) + "\n"
