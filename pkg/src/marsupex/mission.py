"""Two-agent lockstep mission executive.

A ground carrier explores with its own graph planner and, when its local
planner runs dry (or, optionally, at a junction), drives to a deployment
region, hands a map and deployment-graph snapshot to the aerial robot over a
lossy channel and carries on according to the policy.  The aerial robot
co-localizes against the shared feature map, explores inside its handoff box
and returns to where it was released.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import marsupial as ms
from .coloc import RegistrationResult, colocalize
from .mapstore import UnifiedMap, extract_features, sync
from .planner import (ExplorationGraph, GraphKind, PathError, PlannerError, PlannerParams,
                      best_local_path, build_local_graph, detect_frontiers, mark_visited,
                      score_gains, shortest_path, update_global_graph)
from .scenario import ScenarioSpec
from .worldsim import (FREE, UNKNOWN, Pose, RobotSpec, VoxelGrid, body_mask, integrate_scan,
                       raycast_scan, reveal_from)

log = logging.getLogger(__name__)

IDENTITY = Pose(0.0, 0.0, 0.0, 0.0)


class Mode(str, Enum):
    CARRIED = "Carried"
    EXPLORING = "Exploring"
    MOVING_TO_DEPLOY = "MovingToDeploy"
    DEPLOYING = "Deploying"
    COLOCALIZING = "Colocalizing"
    HOMING = "Homing"
    RETRIEVING = "Retrieving"
    LANDED = "Landed"
    DONE = "Done"
    FAULT = "Fault"


MOVING = (Mode.EXPLORING, Mode.MOVING_TO_DEPLOY, Mode.HOMING, Mode.RETRIEVING)
FINISHED = (Mode.DONE, Mode.LANDED, Mode.FAULT)


@dataclass
class AgentState:
    name: str
    robot: RobotSpec
    params: PlannerParams
    pose: Pose
    grid: VoxelGrid
    umap: UnifiedMap
    graph: ExplorationGraph
    rng: np.random.Generator
    mode: Mode = Mode.EXPLORING
    offset: Pose = IDENTITY          # true pose = offset * pose
    elapsed: float = 0.0
    distance_traveled: float = 0.0
    path: list = field(default_factory=list)
    return_pose: Pose | None = None
    clip: tuple | None = None
    weight: object = None
    executed: list = field(default_factory=list)
    newly_observed: int = 0
    home_estimate: float = 0.0
    home_checked: float = -math.inf

    @property
    def true_pose(self) -> Pose:
        return self.offset.compose(self.pose)


@dataclass
class Message:
    deliver_at: float
    seq: int
    src: str
    dst: str
    kind: str
    payload: bytes = b""


class Channel:
    """In-process link with fixed latency and independent drop probability."""

    def __init__(self, latency: float, drop: float, rng: np.random.Generator):
        self.latency = latency
        self.drop = drop
        self.rng = rng
        self.queue: list[Message] = []
        self.seq = 0
        self.sent = 0
        self.dropped = 0

    def send(self, t: float, src: str, dst: str, kind: str, payload: bytes = b"") -> bool:
        self.seq += 1
        self.sent += 1
        if self.drop > 0 and self.rng.random() < self.drop:
            self.dropped += 1
            return False
        self.queue.append(Message(t + self.latency, self.seq, src, dst, kind, payload))
        return True

    def deliver(self, t: float) -> list[Message]:
        due = sorted((m for m in self.queue if m.deliver_at <= t + 1e-9), key=lambda m: (m.deliver_at, m.seq))
        if due:
            keep = {id(m) for m in due}
            self.queue = [m for m in self.queue if id(m) not in keep]
        return due


@dataclass
class Metrics:
    status: str = "running"
    time: float = 0.0
    coverage: float = 0.0
    coverage_series: list = field(default_factory=list)
    time_to_target: float | None = None
    distance: dict = field(default_factory=dict)
    elapsed: dict = field(default_factory=dict)
    final_modes: dict = field(default_factory=dict)
    home_error: dict = field(default_factory=dict)
    deployments: int = 0
    deploy_time: float | None = None
    deploy_pose: Pose | None = None
    deploy_region_center: np.ndarray | None = None
    coloc: RegistrationResult | None = None
    coloc_error: tuple | None = None
    reunion_identical: bool | None = None
    consistency: float = 0.0
    wall_time: float = 0.0

    def lines(self) -> list[str]:
        out = [f"status={self.status}", f"time={self.time:.1f}", f"coverage={self.coverage:.4f}",
               "time_to_target=" + ("none" if self.time_to_target is None else f"{self.time_to_target:.1f}")]
        for k in sorted(self.distance):
            out.append(f"distance_{k}={self.distance[k]:.2f}")
        for k in sorted(self.elapsed):
            out.append(f"elapsed_{k}={self.elapsed[k]:.1f}")
        for k in sorted(self.final_modes):
            out.append(f"mode_{k}={self.final_modes[k]}")
        for k in sorted(self.home_error):
            out.append(f"home_error_{k}={self.home_error[k]:.3f}")
        out.append(f"deployments={self.deployments}")
        if self.deploy_pose is not None:
            p = self.deploy_pose
            out.append(f"deploy_time={self.deploy_time:.1f}")
            out.append(f"deploy_pose={p.x:.3f},{p.y:.3f},{p.z:.3f},{p.yaw:.4f}")
        if self.deploy_region_center is not None:
            c = self.deploy_region_center
            out.append(f"deploy_region={c[0]:.3f},{c[1]:.3f},{c[2]:.3f}")
        if self.coloc is not None:
            out.append(f"coloc_converged={int(self.coloc.converged)}")
            out.append(f"coloc_residual={self.coloc.residual:.4f}")
        if self.coloc_error is not None:
            out.append(f"coloc_error_trans={self.coloc_error[0]:.4f}")
            out.append(f"coloc_error_yaw={self.coloc_error[1]:.5f}")
        if self.reunion_identical is not None:
            out.append(f"reunion_identical={int(self.reunion_identical)}")
        out.append(f"consistency={self.consistency:.4f}")
        return out


class Mission:
    """Mutable mission state plus the step function."""

    def __init__(self, scenario: ScenarioSpec, seed: int = 0, config: str = "marsupial",
                 policy: str | None = None):
        if config not in ("marsupial", "ground_only", "aerial_only"):
            raise ValueError(f"unknown configuration {config!r}")
        self.sc = scenario
        self.cfg = scenario.config
        self.mc = scenario.config.mission
        self.policy = policy or self.mc.policy
        self.kind = config
        self.seed = seed
        self.dt = self.mc.dt
        self.time = 0.0
        self.steps = 0
        self.events: list[str] = []
        self.truth = scenario.world
        self.truth_free = self.truth.cells == FREE
        self.n_free = int(self.truth_free.sum())
        self.metrics = Metrics()
        self.channel = Channel(self.mc.latency, self.mc.drop, np.random.default_rng([seed, 99]))
        self.noise_rng = np.random.default_rng([seed, 7])
        self.drift = np.zeros(4)
        self.gm = ms.DeploymentGraph()
        self.gm_rng = np.random.default_rng([seed, 3])
        self.handoff: ms.HandoffPackage | None = None
        self.handoff_bytes: bytes | None = None
        self.handoff_acked = False
        self.last_handoff_send = -math.inf
        self.coloc_attempts = 0
        self.reunited = False
        self.deploy_at: Pose | None = None
        self.deploy_target: ms.DeploymentRegion | None = None
        self.aerial_box_xy = None
        self.cap = self.mc.cap_factor * (scenario.ground.endurance + scenario.aerial.endurance)

        start = scenario.start_pose
        blocks = dict(block_edge=self.mc.block_edge, resolution=self.truth.resolution)
        self.ground = AgentState("ground", scenario.ground, self.cfg.planner, start, self.truth.blank(),
                                 UnifiedMap(**blocks), ExplorationGraph(GraphKind.GLOBAL_GROUND),
                                 np.random.default_rng([seed, 1]))
        self.ground.return_pose = start
        self.ground.graph.add_vertex(start, home=True)
        carried = start.compose(scenario.extrinsics)
        self.aerial = AgentState("aerial", scenario.aerial, self.cfg.aerial_planner, carried,
                                 self.truth.blank(), UnifiedMap(**blocks),
                                 ExplorationGraph(GraphKind.GLOBAL_AERIAL),
                                 np.random.default_rng([seed, 2]), mode=Mode.CARRIED)
        self.marsupial_enabled = config == "marsupial" and self.mc.marsupial
        self.log_event(self.ground, "start", pose=_fmt_pose(start), config=config, policy=self.policy)
        if config == "aerial_only":
            self.ground.mode = Mode.DONE
            self._release_aerial_alone()
        else:
            self.sense(self.ground)
            self.record_coverage()

    # -- bookkeeping -------------------------------------------------------------

    def log_event(self, agent: AgentState | str, event: str, **kv) -> None:
        name = agent if isinstance(agent, str) else agent.name
        extra = "".join(f" {k}={v}" for k, v in kv.items())
        self.events.append(f"t={self.time:.3f} agent={name} event={event}{extra}")

    def set_mode(self, agent: AgentState, mode: Mode, **kv) -> None:
        if agent.mode != mode:
            self.log_event(agent, "mode", old=agent.mode.value, new=mode.value, **kv)
            agent.mode = mode

    def known_union(self) -> np.ndarray:
        known = self.ground.grid.cells != UNKNOWN
        if self.aerial.mode != Mode.CARRIED:
            known |= self.aerial.grid.cells != UNKNOWN
        return known

    def coverage(self, mask: np.ndarray | None = None) -> float:
        known = self.known_union()
        sel = self.truth_free if mask is None else self.truth_free & mask
        total = int(sel.sum())
        return float((known & sel).sum()) / total if total else 1.0

    def record_coverage(self) -> None:
        c = self.coverage()
        m = self.metrics
        if c > m.coverage + 1e-12 or not m.coverage_series:
            m.coverage = max(m.coverage, c)
            m.coverage_series.append((self.time, m.coverage))
            if m.time_to_target is None and m.coverage >= self.mc.coverage_target:
                m.time_to_target = self.time
                self.log_event("mission", "coverage_target", coverage=f"{m.coverage:.4f}")

    # -- sensing and motion -------------------------------------------------------

    def sense(self, a: AgentState) -> int:
        true = a.true_pose
        scan = raycast_scan(self.truth, true, a.robot.sensor)
        n = integrate_scan(a.grid, a.pose, scan)
        if self.mc.sense_reveal:
            below = a.robot.body_height + self.truth.resolution if a.robot.is_ground else 0.0
            n += reveal_from(a.grid, self.truth, body_mask(a.grid, a.pose, a.robot.collision_radius + 0.2, below))
        pts, labels = extract_features(scan, a.pose, self.cfg.features)
        a.umap.insert_points(pts, labels)
        a.newly_observed += n
        mark_visited(a.graph, a.pose, a.params.edge_radius / 2.0)
        self.record_coverage()
        return n

    def advance(self, a: AgentState) -> None:
        budget = a.robot.nominal_speed * self.dt
        while budget > 1e-12 and a.path:
            target = a.path[0]
            d = a.pose.distance(target)
            yaw = a.pose.yaw
            if math.hypot(target.x - a.pose.x, target.y - a.pose.y) > 1e-6:
                yaw = math.atan2(target.y - a.pose.y, target.x - a.pose.x)
            if d <= budget:
                a.pose = Pose(target.x, target.y, target.z, yaw)
                a.path.pop(0)
                budget -= d
                a.distance_traveled += d
                a.executed.append(a.pose)
                self.sense(a)
            else:
                f = budget / d
                p = a.pose.position + f * (target.position - a.pose.position)
                a.pose = Pose(p[0], p[1], p[2], yaw)
                a.distance_traveled += budget
                budget = 0.0

    def _nearest_vertex(self, a: AgentState) -> int:
        home = a.graph.home_id()
        comp = a.graph.component(home)
        return a.graph.nearest(a.pose.position, ids=sorted(comp))

    def _path_to(self, a: AgentState, vid: int) -> tuple[list[Pose], float]:
        cur = self._nearest_vertex(a)
        lead = a.pose.distance(a.graph.pose(cur))
        path, length = shortest_path(a.graph, cur, vid)
        if lead > 1e-9:
            path = [a.graph.pose(cur)] + path
        return path, length + lead

    def home_path(self, a: AgentState) -> tuple[list[Pose], float]:
        path, length = self._path_to(a, a.graph.home_id())
        ret = a.return_pose
        last = path[-1] if path else a.pose
        if ret is not None and last.distance(ret) > 1e-9:
            path = path + [ret]
            length += last.distance(ret)
        return path, length

    def _home_estimate(self, a: AgentState) -> float:
        if self.time - a.home_checked >= 1.0:
            try:
                a.home_estimate = self.home_path(a)[1] / a.robot.nominal_speed
            except PathError:
                a.home_estimate = math.inf
            a.home_checked = self.time
        return a.home_estimate

    def start_homing(self, a: AgentState, reason: str) -> None:
        try:
            path, length = self.home_path(a)
        except PathError as e:
            self.set_mode(a, Mode.FAULT, reason="no_home_path")
            self.log_event(a, "fault", detail=str(e).replace(" ", "_"))
            return
        a.path = path
        self.set_mode(a, Mode.HOMING, reason=reason, length=f"{length:.2f}")

    # -- ground behaviour --------------------------------------------------------

    def _ground_weight(self, v) -> float:
        if v.gain is None:
            return 0.0
        if self.ground.clip is not None:
            lo, hi = self.ground.clip
            p = v.pose.position
            if (p < lo).any() or (p > hi).any():
                return 0.0
        return v.gain.volume

    def _aerial_available(self) -> bool:
        return self.marsupial_enabled and self.aerial.mode == Mode.CARRIED and self.handoff is None

    def plan_ground(self) -> None:
        g = self.ground
        p = g.params
        try:
            local = build_local_graph(g.grid, g.pose, g.robot, p, g.rng, clip_box=g.clip)
            score_gains(local, g.grid, g.robot.sensor, p)
        except PlannerError as e:
            self.log_event(g, "plan_error", detail=str(e).replace(" ", "_"))
            local = None
        if local is not None and g.clip is not None:
            for v in local.vertices.values():
                v.score = self._ground_weight(v)
        executed, g.executed = g.executed, []
        update_global_graph(g.graph, local, executed, p, g.grid, g.robot)
        if self.marsupial_enabled and self.handoff is None:
            ms.update_deployment_graph(self.gm, g.grid, self.sc.aerial.sensor, executed, g.robot, p,
                                       self.cfg.marsupial, self.gm_rng,
                                       gain_range=self.cfg.aerial_planner.gain_range, score=False)
        frontiers = None
        if self._aerial_available() and self.cfg.marsupial.deploy_on_branch:
            frontiers = self._frontiers()
            if self._try_branch_deploy(frontiers):
                return
        if local is not None:
            path, value, _ = best_local_path(local, p)
            if value >= p.completion_gain_threshold and path:
                g.path = path[: self.mc.max_local_steps]
                self.log_event(g, "local_path", gain=f"{value:.2f}", n=len(g.path))
                return
        self.log_event(g, "local_completion")
        if frontiers is None:
            frontiers = self._frontiers()
        if self._aerial_available() and self._try_region_deploy(frontiers):
            return
        for vid in frontiers:
            try:
                path, length = self._path_to(g, vid)
            except PathError:
                continue
            g.path = path
            self.log_event(g, "reposition", vertex=vid, length=f"{length:.2f}")
            return
        if self._should_retrieve():
            self.start_retrieval()
            return
        self.start_homing(g, "explored")

    def _should_retrieve(self) -> bool:
        return (self.kind == "marsupial" and self.deploy_at is not None and not self.reunited
                and self.handoff_acked and self.aerial.mode != Mode.FAULT)

    def start_retrieval(self) -> None:
        """Head for the deployment spot and wait there for the aerial robot to land."""
        g = self.ground
        try:
            path, length = self._path_to(g, g.graph.nearest(self.deploy_at.position,
                                                            ids=sorted(g.graph.component(g.graph.home_id()))))
        except PathError:
            self.start_homing(g, "explored")
            return
        last = path[-1] if path else g.pose
        if last.distance(self.deploy_at) > 1e-9:
            path = path + [self.deploy_at]
            length += last.distance(self.deploy_at)
        g.path = path
        self.set_mode(g, Mode.RETRIEVING, length=f"{length:.2f}")

    def _frontiers(self) -> list[int]:
        g = self.ground
        return detect_frontiers(g.graph, g.grid, g.robot, g.params, reference=g.pose,
                                weight=self._ground_weight)

    def _try_region_deploy(self, frontiers: list[int]) -> bool:
        g = self.ground
        ms.update_deployment_graph(self.gm, g.grid, self.sc.aerial.sensor, [], g.robot, g.params,
                                   self.cfg.marsupial, self.gm_rng,
                                   gain_range=self.cfg.aerial_planner.gain_range, score=True)
        fposes = [g.graph.pose(v) for v in frontiers]
        regions = ms.identify_deployment_regions(self.gm, g.pose, fposes, self.cfg.marsupial,
                                                 g.params.completion_gain_threshold, g.graph)
        self.log_event(g, "regions", n=len(regions), gm_vertices=len(self.gm))
        if not regions:
            return False
        sel = ms.select_deployment(g.graph, regions, self._nearest_vertex(g))
        if sel is None:
            return False
        region, _, _ = sel
        path, length = self._path_to(g, region.nearest_global_vertex)
        g.path = path
        self.deploy_target = region
        c = region.center
        self.set_mode(g, Mode.MOVING_TO_DEPLOY, region=f"{c[0]:.2f},{c[1]:.2f},{c[2]:.2f}",
                      length=f"{length:.2f}")
        return True

    def _try_branch_deploy(self, frontiers: list[int]) -> bool:
        g = self.ground
        poses = [g.graph.pose(v) for v in frontiers]
        pair = ms.branch_split(poses, self.cfg.marsupial.branch_min_separation,
                               here=g.pose,
                               min_angle=self.cfg.marsupial.branch_min_angle,
                               scores=[g.graph.vertices[v].score for v in frontiers],
                               min_gain_ratio=self.cfg.marsupial.branch_min_gain_ratio)
        if pair is None:
            return False
        mine, theirs = pair
        # keep the higher-priority frontier for the carrier
        if poses.index(theirs) < poses.index(mine):
            mine, theirs = theirs, mine
        gb = self.sc.global_bbox
        self.aerial_box_xy = ms.split_box(gb, theirs, mine)
        lo_xy, hi_xy = ms.split_box(gb, mine, theirs)
        g.clip = (np.array([lo_xy[0], lo_xy[1], gb[0][2]]), np.array([hi_xy[0], hi_xy[1], gb[1][2]]))
        self.log_event(g, "branch", mine=_fmt_xy(mine), theirs=_fmt_xy(theirs))
        self.set_mode(g, Mode.DEPLOYING)
        return True

    def reported_ground_pose(self) -> Pose:
        t = self.ground.true_pose
        d = self.drift
        return Pose(t.x + d[0], t.y + d[1], t.z + d[2], t.yaw + d[3])

    def deploy(self) -> None:
        g = self.ground
        pose = self.reported_ground_pose()
        self.deploy_at = g.pose
        ms.update_deployment_graph(self.gm, g.grid, self.sc.aerial.sensor, [], g.robot, g.params,
                                   self.cfg.marsupial, self.gm_rng,
                                   gain_range=self.cfg.aerial_planner.gain_range, score=True)
        self.handoff = ms.make_handoff(self.gm, g.umap, pose, self.sc.global_bbox,
                                       self.cfg.marsupial.direction, self.aerial_box_xy)
        self.handoff_bytes = ms.encode_handoff(self.handoff)
        m = self.metrics
        m.deployments += 1
        m.deploy_time = self.time
        m.deploy_pose = pose
        if self.deploy_target is not None:
            m.deploy_region_center = self.deploy_target.center
        lo, hi = self.handoff.bbox
        self.log_event(g, "deploy", pose=_fmt_pose(pose), blocks=len(self.handoff.blocks),
                       gm_vertices=len(self.gm), bytes=len(self.handoff_bytes),
                       bbox=f"{lo[0]:.2f},{lo[1]:.2f},{lo[2]:.2f},{hi[0]:.2f},{hi[1]:.2f},{hi[2]:.2f}")
        self._send_handoff()

    def _send_handoff(self) -> None:
        self.last_handoff_send = self.time
        ok = self.channel.send(self.time, "ground", "aerial", "handoff", self.handoff_bytes)
        self.log_event(self.ground, "send", kind="handoff", delivered=int(ok))

    def step_ground(self) -> None:
        g = self.ground
        if g.mode in FINISHED:
            return
        g.elapsed += self.dt
        if self.mc.odometry_sigma > 0:
            s = self.mc.odometry_sigma * math.sqrt(self.dt)
            self.drift += self.noise_rng.normal(0.0, s, 4) * np.array([1.0, 1.0, 0.2, 0.05])
        if g.mode == Mode.DEPLOYING:
            if self.handoff is None:
                self.deploy()
            elif not self.handoff_acked:
                if self.time - self.last_handoff_send >= self.mc.retry_interval - 1e-9:
                    self._send_handoff()
            elif self.policy == "wait":
                if self.aerial.mode in FINISHED:
                    self.set_mode(g, Mode.EXPLORING, policy="wait")
            elif self.policy == "home":
                self.start_homing(g, "policy")
            else:
                self.set_mode(g, Mode.EXPLORING, policy="continue")
            return
        if g.mode in (Mode.EXPLORING, Mode.RETRIEVING) and g.elapsed + self.mc.homing_margin >= \
                g.robot.endurance - self.mc.homing_factor * self._home_estimate(g):
            self.start_homing(g, "endurance")
        if g.mode == Mode.RETRIEVING and (self.reunited or self.aerial.mode == Mode.FAULT):
            self.start_homing(g, "retrieved" if self.reunited else "aerial_fault")
        if not g.path:
            if g.mode == Mode.RETRIEVING:
                return
            if g.mode == Mode.EXPLORING:
                self.plan_ground()
            elif g.mode == Mode.MOVING_TO_DEPLOY:
                self.set_mode(g, Mode.DEPLOYING)
                return
            elif g.mode == Mode.HOMING:
                self.set_mode(g, Mode.DONE)
                return
        self.advance(g)

    # -- aerial behaviour --------------------------------------------------------

    def _release_aerial_alone(self) -> None:
        a = self.aerial
        start = self.sc.start_pose
        lo, hi = ms.clip_bbox(self.sc.global_bbox, start, self.cfg.marsupial.direction)
        self.handoff = ms.HandoffPackage([], ms.DeploymentGraph(), start, (lo, hi),
                                         self.cfg.marsupial.direction, start, self.truth.resolution)
        self.handoff_acked = True
        self._begin_aerial(a.pose)

    def _begin_aerial(self, est: Pose) -> None:
        a = self.aerial
        true = a.true_pose if self.kind == "aerial_only" else self.ground.true_pose.compose(self.sc.extrinsics)
        a.pose = est
        # offset maps the estimated frame onto the world
        a.offset = true.compose(est.inverse())
        a.return_pose = self.handoff.return_pose
        a.clip = self.handoff.bbox
        a.weight = ms.GainModulator(self.handoff, self.cfg.marsupial)
        a.graph.add_vertex(est, home=True)
        self.set_mode(a, Mode.EXPLORING)
        self.sense(a)

    def on_message(self, msg: Message) -> None:
        if msg.dst == "aerial" and msg.kind == "handoff":
            self.channel.send(self.time, "aerial", "ground", "ack")
            if self.aerial.mode != Mode.CARRIED:
                return
            pkg = ms.decode_handoff(msg.payload)
            self.aerial.umap.merge_blocks(pkg.blocks, pkg.block_edge, pkg.frame)
            self.aerial_pkg = pkg
            self.log_event(self.aerial, "handoff_received", blocks=len(pkg.blocks),
                           points=self.aerial.umap.n_points())
            self.set_mode(self.aerial, Mode.COLOCALIZING)
        elif msg.dst == "ground" and msg.kind == "ack":
            if not self.handoff_acked:
                self.handoff_acked = True
                self.log_event(self.ground, "ack")

    def colocalize_aerial(self) -> None:
        a = self.aerial
        pkg = self.aerial_pkg
        true = self.ground.true_pose.compose(self.sc.extrinsics)
        scan = raycast_scan(self.truth, true, a.robot.sensor)
        base = pkg.ground_pose
        if self.coloc_attempts > 0:
            # restart from a nearby initial guess
            r = self.mc.coloc_restart_radius
            d = a.rng.uniform(-r, r, 3)
            base = Pose(base.x + d[0], base.y + d[1], base.z, base.yaw)
        self.coloc_attempts += 1
        res = colocalize(scan, a.umap, base, self.sc.extrinsics, self.cfg.registration, self.cfg.features)
        self.metrics.coloc = res
        self.log_event(a, "coloc", attempt=self.coloc_attempts, converged=int(res.converged),
                       iterations=res.iterations_used, residual=f"{res.residual:.4f}",
                       error=res.error or "-", pose=_fmt_pose(res.pose))
        if res.converged:
            err = res.pose.position - true.position
            self.metrics.coloc_error = (float(np.linalg.norm(err)),
                                        abs(math.remainder(res.pose.yaw - true.yaw, 2 * math.pi)))
            self._begin_aerial(res.pose)
        elif self.coloc_attempts > self.mc.coloc_retries:
            self.set_mode(a, Mode.FAULT, reason="colocalization")

    def plan_aerial(self) -> None:
        a = self.aerial
        p = a.params
        try:
            local = build_local_graph(a.grid, a.pose, a.robot, p, a.rng, clip_box=a.clip)
            score_gains(local, a.grid, a.robot.sensor, p)
            for v in local.vertices.values():
                v.score = a.weight(v)
        except PlannerError as e:
            self.log_event(a, "plan_error", detail=str(e).replace(" ", "_"))
            local = None
        executed, a.executed = a.executed, []
        update_global_graph(a.graph, local, executed, p, a.grid, a.robot)
        if local is not None:
            path, value, _ = best_local_path(local, p)
            if value >= p.completion_gain_threshold and path:
                a.path = path[: self.mc.max_local_steps]
                self.log_event(a, "local_path", gain=f"{value:.2f}", n=len(a.path))
                return
        self.log_event(a, "local_completion")
        frontiers = detect_frontiers(a.graph, a.grid, a.robot, p, reference=a.pose, weight=a.weight)
        for vid in frontiers:
            try:
                path, length = self._path_to(a, vid)
            except PathError:
                continue
            a.path = path
            self.log_event(a, "reposition", vertex=vid, length=f"{length:.2f}")
            return
        self.start_homing(a, "explored")

    def step_aerial(self) -> None:
        a = self.aerial
        if a.mode == Mode.CARRIED:
            a.pose = self.ground.pose.compose(self.sc.extrinsics)
            a.offset = IDENTITY
            return
        if a.mode in FINISHED:
            return
        a.elapsed += self.dt
        if a.mode == Mode.COLOCALIZING:
            self.colocalize_aerial()
            return
        if a.mode == Mode.EXPLORING and a.elapsed + self.mc.homing_margin >= \
                a.robot.endurance - self.mc.homing_factor * self._home_estimate(a):
            self.start_homing(a, "endurance")
        if not a.path:
            if a.mode == Mode.EXPLORING:
                self.plan_aerial()
            elif a.mode == Mode.HOMING:
                self.set_mode(a, Mode.LANDED)
                return
        self.advance(a)

    # -- mission loop ------------------------------------------------------------

    def check_reunion(self) -> None:
        if self.reunited or self.aerial.mode != Mode.LANDED or self.kind != "marsupial":
            return
        g, a = self.ground, self.aerial
        if g.true_pose.distance(a.true_pose) <= self.mc.reunion_radius:
            to_a, to_g = sync(g.umap, a.umap)
            self.reunited = True
            same = g.umap.point_set() == a.umap.point_set()
            self.metrics.reunion_identical = same
            self.log_event("mission", "reunion_merge", to_aerial=to_a, to_ground=to_g, identical=int(same))

    def finished(self) -> bool:
        g_done = self.ground.mode in FINISHED
        a_done = self.aerial.mode in FINISHED or (self.aerial.mode == Mode.CARRIED and self.handoff is None)
        return g_done and a_done

    def step(self) -> None:
        for msg in self.channel.deliver(self.time):
            self.on_message(msg)
        self.step_ground()
        self.step_aerial()
        self.check_reunion()
        self.steps += 1
        self.time = self.steps * self.dt

    def run(self, wall_cap: float | None = None) -> Metrics:
        t0 = time.perf_counter()
        while not self.finished():
            if self.time >= self.cap or (wall_cap is not None and time.perf_counter() - t0 > wall_cap):
                self.metrics.status = "cap_exceeded"
                self.log_event("mission", "cap_exceeded")
                break
            self.step()
        self.finalize(time.perf_counter() - t0)
        return self.metrics

    def finalize(self, wall: float) -> None:
        m = self.metrics
        m.wall_time = wall
        m.time = self.time
        if m.status == "running":
            m.status = "fault" if Mode.FAULT in (self.ground.mode, self.aerial.mode) else "complete"
        for a in (self.ground, self.aerial):
            m.distance[a.name] = a.distance_traveled
            m.elapsed[a.name] = a.elapsed
            m.final_modes[a.name] = a.mode.value
            if a.return_pose is not None and a.mode != Mode.CARRIED:
                m.home_error[a.name] = float(np.linalg.norm(a.true_pose.position - a.return_pose.position))
        known = self.known_union()
        est = np.where(self.ground.grid.cells != UNKNOWN, self.ground.grid.cells, self.aerial.grid.cells)
        m.consistency = float((est[known] == self.truth.cells[known]).mean()) if known.any() else 1.0
        self.log_event("mission", "end", status=m.status, coverage=f"{m.coverage:.4f}")

    def merged_map(self) -> UnifiedMap:
        """Ground map with everything the aerial robot mapped unioned in."""
        out = self.ground.umap.copy()
        if self.aerial.mode != Mode.CARRIED:
            out.merge_blocks(self.aerial.umap.blocks.values())
        return out

    def merged_grid(self) -> VoxelGrid:
        g = self.ground.grid
        cells = np.where(g.cells != UNKNOWN, g.cells, self.aerial.grid.cells)
        return VoxelGrid(g.origin, g.resolution, g.dims, cells.copy())

    def exit_code(self) -> int:
        return {"complete": 0, "fault": 2, "cap_exceeded": 3}.get(self.metrics.status, 1)

    def event_log(self) -> str:
        return "\n".join(self.events) + "\n"


def _fmt_pose(p: Pose) -> str:
    return f"{p.x:.3f},{p.y:.3f},{p.z:.3f},{p.yaw:.4f}"


def _fmt_xy(p: Pose) -> str:
    return f"{p.x:.2f},{p.y:.2f}"


def run_mission(scenario: ScenarioSpec, seed: int = 0, config: str = "marsupial",
                policy: str | None = None, wall_cap: float | None = None) -> Mission:
    m = Mission(scenario, seed, config, policy)
    m.run(wall_cap)
    return m


def compare_runs(scenario: ScenarioSpec, seed: int = 0,
                 configs=("ground_only", "aerial_only", "marsupial")) -> dict[str, Mission]:
    return {c: run_mission(scenario, seed, c) for c in configs}


def compare_table(results: dict[str, Mission]) -> str:
    head = f"{'config':<12} {'status':<13} {'coverage':>8} {'t_target':>9} {'time':>8} {'dist_g':>8} {'dist_a':>8}"
    rows = [head]
    for name, mi in results.items():
        m = mi.metrics
        tt = "-" if m.time_to_target is None else f"{m.time_to_target:.1f}"
        rows.append(f"{name:<12} {m.status:<13} {m.coverage:>8.4f} {tt:>9} {m.time:>8.1f} "
                    f"{m.distance.get('ground', 0):>8.2f} {m.distance.get('aerial', 0):>8.2f}")
    return "\n".join(rows) + "\n"
