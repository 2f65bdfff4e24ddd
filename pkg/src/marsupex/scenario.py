"""Scenario documents: world geometry, robots and every tunable parameter.

A scenario is a YAML mapping::

    name: room
    resolution: 0.25
    world:
      size: [10, 10, 3]          # interior extent (m), min corner at the origin
      boxes:                     # occupied solids, voxel centers inside [min, max]
        - {min: [4, 4, 0], max: [5, 5, 3]}
      ramps:
        - {min: [0, 0, 0], max: [4, 2, 0], axis: x, rise: 0.5}
      layers: [...]              # alternative: one ASCII grid per z-layer
    start: [1, 1, 0]             # x, y, yaw; z is dropped onto the floor
    robots: {ground: {...}, aerial: {...}, extrinsics: [0, 0, 0.4, 0]}
    config: {planner: {...}, aerial_planner: {...}, marsupial: {...},
             mission: {...}, registration: {...}, features: {...}}
    regions: {name: {min: [...], max: [...]}}   # optional named boxes

An occupied shell one voxel thick is wrapped around the interior, so the
floor top sits at z = 0.
"""
from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .coloc import RegistrationParams
from .mapstore import FeatureParams
from .marsupial import MarsupialConfig
from .planner import PlannerParams
from .worldsim import (FREE, OCCUPIED, Pose, RobotKind, RobotSpec, SensorSpec, VoxelGrid,
                       position_clear, project_to_ground)


class ScenarioError(ValueError):
    """Malformed or invalid scenario document."""


@dataclass
class MissionConfig:
    dt: float = 0.1
    policy: str = "continue"
    latency: float = 0.2
    drop: float = 0.0
    retry_interval: float = 1.0
    odometry_sigma: float = 0.0
    homing_factor: float = 1.25
    homing_margin: float = 5.0
    cap_factor: float = 4.0
    coloc_retries: int = 3
    coloc_restart_radius: float = 0.2
    reunion_radius: float = 3.0
    marsupial: bool = True
    aerial_only: bool = False
    block_edge: float = 10.0
    sense_reveal: bool = True
    max_local_steps: int = 4
    coverage_target: float = 0.95

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.policy not in ("continue", "wait", "home"):
            raise ValueError("policy must be continue, wait or home")
        if not 0.0 <= self.drop < 1.0:
            raise ValueError("drop must lie in [0, 1)")
        if self.latency < 0 or self.homing_factor < 1.0 or self.cap_factor <= 0:
            raise ValueError("latency >= 0, homing_factor >= 1, cap_factor > 0 required")


@dataclass
class ScenarioConfig:
    planner: PlannerParams = field(default_factory=lambda: PlannerParams(unknown_support=True))
    aerial_planner: PlannerParams = field(default_factory=lambda: PlannerParams(local_bbox=(20.0, 20.0, 10.0)))
    marsupial: MarsupialConfig = field(default_factory=MarsupialConfig)
    mission: MissionConfig = field(default_factory=MissionConfig)
    registration: RegistrationParams = field(default_factory=RegistrationParams)
    features: FeatureParams = field(default_factory=FeatureParams)


@dataclass
class ScenarioSpec:
    name: str
    world: VoxelGrid
    start_pose: Pose
    ground: RobotSpec
    aerial: RobotSpec
    extrinsics: Pose
    global_bbox: tuple[np.ndarray, np.ndarray]
    config: ScenarioConfig
    regions: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    document: dict = field(default_factory=dict)


# -- world construction -------------------------------------------------------------

def _vec(v, n, where):
    try:
        out = [float(x) for x in v]
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: expected {n} numbers, got {v!r}") from None
    if len(out) != n:
        raise ScenarioError(f"{where}: expected {n} numbers, got {len(out)}")
    return out


def _centers(grid: VoxelGrid):
    axes = [grid.origin[a] + (np.arange(grid.dims[a]) + 0.5) * grid.resolution for a in range(3)]
    return np.meshgrid(*axes, indexing="ij")


def _box_mask(cx, cy, cz, lo, hi, eps=1e-9):
    return ((cx >= lo[0] - eps) & (cx <= hi[0] + eps) & (cy >= lo[1] - eps) & (cy <= hi[1] + eps)
            & (cz >= lo[2] - eps) & (cz <= hi[2] + eps))


def build_world(spec: dict, resolution: float) -> VoxelGrid:
    if not isinstance(spec, dict):
        raise ScenarioError("world: expected a mapping")
    if "layers" in spec:
        return _layers_world(spec, resolution)
    if "size" not in spec:
        raise ScenarioError("world.size: required unless world.layers is given")
    size = _vec(spec["size"], 3, "world.size")
    if min(size) <= 0:
        raise ScenarioError("world.size: extents must be > 0")
    n = [int(round(s / resolution)) for s in size]
    for s, k in zip(size, n):
        if abs(k * resolution - s) > 1e-6:
            raise ScenarioError(f"world.size: {s} is not a multiple of resolution {resolution}")
    grid = VoxelGrid((-resolution,) * 3, resolution, [k + 2 for k in n], fill=FREE)
    cx, cy, cz = _centers(grid)
    for i, box in enumerate(spec.get("boxes", []) or []):
        lo = _vec(box.get("min"), 3, f"world.boxes[{i}].min")
        hi = _vec(box.get("max"), 3, f"world.boxes[{i}].max")
        state = FREE if box.get("free") else OCCUPIED
        grid.cells[_box_mask(cx, cy, cz, lo, hi)] = state
    for i, ramp in enumerate(spec.get("ramps", []) or []):
        lo = _vec(ramp.get("min"), 3, f"world.ramps[{i}].min")
        hi = _vec(ramp.get("max"), 3, f"world.ramps[{i}].max")
        axis = {"x": 0, "y": 1}.get(ramp.get("axis", "x"))
        if axis is None:
            raise ScenarioError(f"world.ramps[{i}].axis: must be x or y")
        rise = float(ramp.get("rise", 0.0))
        c = (cx, cy)[axis]
        frac = np.clip((c - lo[axis]) / max(hi[axis] - lo[axis], 1e-9), 0.0, 1.0)
        top = lo[2] + rise * frac
        m = _box_mask(cx, cy, cz, lo, [hi[0], hi[1], lo[2] + rise]) & (cz <= top)
        grid.cells[m] = OCCUPIED
    _shell(grid)
    grid.touch()
    return grid


def _layers_world(spec: dict, resolution: float) -> VoxelGrid:
    layers = spec["layers"]
    if not layers:
        raise ScenarioError("world.layers: empty")
    rows = [str(layer).strip("\n").splitlines() for layer in layers]
    ny = len(rows[0])
    nx = len(rows[0][0]) if ny else 0
    for k, r in enumerate(rows):
        if len(r) != ny or any(len(line) != nx for line in r):
            raise ScenarioError(f"world.layers[{k}]: all layers must be {nx}x{ny} characters")
    grid = VoxelGrid((-resolution,) * 3, resolution, (nx + 2, ny + 2, len(rows) + 2), fill=FREE)
    for k, r in enumerate(rows):
        for j, line in enumerate(r):
            for i, ch in enumerate(line):
                if ch not in "#.":
                    raise ScenarioError(f"world.layers[{k}] row {j} col {i}: unexpected {ch!r}")
                # first text row is the largest y, like a map drawn from above
                grid.cells[i + 1, ny - j, k + 1] = OCCUPIED if ch == "#" else FREE
    _shell(grid)
    grid.touch()
    return grid


def _shell(grid: VoxelGrid) -> None:
    c = grid.cells
    c[0, :, :] = c[-1, :, :] = OCCUPIED
    c[:, 0, :] = c[:, -1, :] = OCCUPIED
    c[:, :, 0] = c[:, :, -1] = OCCUPIED


def interior_mask(grid: VoxelGrid) -> np.ndarray:
    m = np.zeros(grid.dims, bool)
    m[1:-1, 1:-1, 1:-1] = True
    return m


# -- robots and config ----------------------------------------------------------------

def _sensor(base: SensorSpec, doc: dict | None, where: str) -> SensorSpec:
    if not doc:
        return base
    try:
        return dataclasses.replace(base, **doc)
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"{where}: {e}") from None


def _robot(kind: str, doc: dict | None) -> RobotSpec:
    doc = dict(doc or {})
    base = RobotSpec.ground() if kind == "ground" else RobotSpec.aerial()
    sensor = _sensor(base.sensor, doc.pop("sensor", None), f"robots.{kind}.sensor")
    aliases = {"speed": "nominal_speed", "step_height": "max_step_height"}
    kw = {aliases.get(k, k): v for k, v in doc.items()}
    try:
        return dataclasses.replace(base, sensor=sensor, **kw)
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"robots.{kind}: {e}") from None


def _section(cls, base, doc, where):
    if not doc:
        return base
    if not isinstance(doc, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    for k in doc:
        if k not in names:
            raise ScenarioError(f"{where}.{k}: unknown parameter")
    try:
        return dataclasses.replace(base, **doc)
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"{where}: {e}") from None


def _config(doc: dict | None) -> ScenarioConfig:
    doc = doc or {}
    base = ScenarioConfig()
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    for k in doc:
        if k not in known:
            raise ScenarioError(f"config.{k}: unknown section")
    return ScenarioConfig(
        planner=_section(PlannerParams, base.planner, doc.get("planner"), "config.planner"),
        aerial_planner=_section(PlannerParams, base.aerial_planner, doc.get("aerial_planner"),
                                "config.aerial_planner"),
        marsupial=_section(MarsupialConfig, base.marsupial, doc.get("marsupial"), "config.marsupial"),
        mission=_section(MissionConfig, base.mission, doc.get("mission"), "config.mission"),
        registration=_section(RegistrationParams, base.registration, doc.get("registration"),
                              "config.registration"),
        features=_section(FeatureParams, base.features, doc.get("features"), "config.features"),
    )


# -- overrides and loading ----------------------------------------------------------------

def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``key.path=value`` strings (values parsed as YAML scalars).

    Paths starting with a config section name (``mission.policy=home``) are
    taken relative to ``config``.
    """
    doc = copy.deepcopy(doc)
    sections = {f.name for f in dataclasses.fields(ScenarioConfig)}
    for item in overrides or ():
        if "=" not in item:
            raise ScenarioError(f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if parts[0] in sections:
            parts = ["config"] + parts
        node = doc
        for p in parts[:-1]:
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            if not isinstance(nxt, dict):
                raise ScenarioError(f"override {key}: {p} is not a section")
            node = nxt
        node[parts[-1]] = yaml.safe_load(raw)
    return doc


def parse_document(text: str) -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise ScenarioError(f"parse error: {where}{getattr(e, 'problem', e)}") from None
    if not isinstance(doc, dict):
        raise ScenarioError("parse error: document must be a mapping")
    return doc


def load_scenario(text: str, overrides=()) -> ScenarioSpec:
    return scenario_from_dict(apply_overrides(parse_document(text), overrides))


def scenario_from_dict(doc: dict) -> ScenarioSpec:
    res = float(doc.get("resolution", 0.25))
    if res <= 0:
        raise ScenarioError("resolution: must be > 0")
    world = build_world(doc.get("world"), res)
    robots = doc.get("robots", {}) or {}
    ground = _robot("ground", robots.get("ground"))
    aerial = _robot("aerial", robots.get("aerial"))
    if ground.kind != RobotKind.GROUND or aerial.kind != RobotKind.AERIAL:
        raise ScenarioError("robots: kinds cannot be overridden")
    ext = _vec(robots.get("extrinsics", [0.0, 0.0, 0.4, 0.0]), 4, "robots.extrinsics")
    extrinsics = Pose(ext[0], ext[1], ext[2], math.radians(ext[3]))
    if "start" not in doc:
        raise ScenarioError("start: required")
    st = _vec(doc["start"], 3, "start")
    start = project_to_ground(world, st[0], st[1], 0.5 * res + ground.body_height, ground)
    if start is None or world.cells[world.index_of((st[0], st[1], 0.25 * res))] != FREE:
        raise ScenarioError(f"start: ({st[0]}, {st[1]}) is not on free, supported floor")
    start = Pose(start.x, start.y, start.z, math.radians(st[2]))
    if not position_clear(world, start, ground):
        raise ScenarioError("start: robot body collides with the world")
    lo = np.zeros(3)
    hi = world.upper - 2 * res - world.origin
    if "global_bbox" in doc:
        gb = doc["global_bbox"]
        lo = np.array(_vec(gb.get("min"), 3, "global_bbox.min"))
        hi = np.array(_vec(gb.get("max"), 3, "global_bbox.max"))
    regions = {}
    for name, box in (doc.get("regions") or {}).items():
        regions[name] = (np.array(_vec(box.get("min"), 3, f"regions.{name}.min")),
                         np.array(_vec(box.get("max"), 3, f"regions.{name}.max")))
    return ScenarioSpec(str(doc.get("name", "scenario")), world, start, ground, aerial, extrinsics,
                        (lo, hi), _config(doc.get("config")), regions, doc)


def builtin_names() -> list[str]:
    root = resources.files("marsupex") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def scenario_text(name_or_path: str) -> str:
    """Read a scenario by built-in name or file path."""
    p = Path(name_or_path)
    if p.suffix in (".yaml", ".yml") and p.exists():
        return p.read_text()
    root = resources.files("marsupex") / "scenarios" / f"{name_or_path}.yaml"
    if not root.is_file():
        raise ScenarioError(f"no scenario named {name_or_path!r} (built-in: {', '.join(builtin_names())})")
    return root.read_text()


def load_named(name_or_path: str, overrides=()) -> ScenarioSpec:
    return load_scenario(scenario_text(name_or_path), overrides)


def region_mask(grid: VoxelGrid, box) -> np.ndarray:
    cx, cy, cz = _centers(grid)
    return _box_mask(cx, cy, cz, box[0], box[1])
