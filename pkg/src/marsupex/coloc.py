"""Scan-to-map registration and deployment-time co-localization.

Solves for (x, y, z, yaw) only; roll and pitch are held at zero.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .mapstore import EDGE, FeatureParams, UnifiedMap, extract_features
from .worldsim import Pose, ScanPointCloud

log = logging.getLogger(__name__)

NO_CORRESPONDENCES = "empty_correspondences"
NOT_CONVERGED = "not_converged"
RESIDUAL_REJECTED = "residual_rejected"
LOW_OVERLAP = "low_overlap"


@dataclass(frozen=True)
class RegistrationParams:
    max_iterations: int = 30
    epsilon_trans: float = 0.01
    epsilon_rot: float = 0.005
    corr_max_dist: float = 1.0
    residual_reject: float = 0.2
    outlier_dist: float = 0.3
    irls_floor: float = 0.02
    min_overlap: float = 0.2         # fraction of scan features that must find a map feature

    def __post_init__(self):
        if self.max_iterations <= 0 or min(self.epsilon_trans, self.epsilon_rot, self.corr_max_dist,
                                           self.irls_floor) <= 0:
            raise ValueError("registration parameters must be strictly positive")
        if max(self.epsilon_trans, self.epsilon_rot) >= self.corr_max_dist:
            raise ValueError("convergence thresholds must be below corr_max_dist")
        if not 0.0 <= self.min_overlap <= 1.0:
            raise ValueError("min_overlap must lie in [0, 1]")


@dataclass
class RegistrationResult:
    pose: Pose
    converged: bool
    iterations_used: int
    residual: float
    error: str | None = None
    last_update: tuple[float, float] = (math.inf, math.inf)
    history: list[float] = field(default_factory=list)
    n_correspondences: int = 0

    def summary(self) -> str:
        p = self.pose
        return (f"converged={int(self.converged)} iterations={self.iterations_used} "
                f"residual={self.residual:.4f} error={self.error or '-'} "
                f"pose={p.x:.3f},{p.y:.3f},{p.z:.3f},{p.yaw:.4f}")


def _rot(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drot(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


class _Problem:
    """Correspondence search and linearization for one scan/map pair."""

    def __init__(self, edge_pts, planar_pts, umap: UnifiedMap, gate: float, trunc: float,
                 floor: float = 0.02):
        self.edge_s = edge_pts
        self.planar_s = planar_pts
        self.etree, self.emap, self.ptree, self.pmap = umap.kd_snapshot()
        self.gate = gate
        self.trunc = trunc
        self.floor = floor

    def _planes(self, world):
        empty = np.zeros(0, int), np.zeros((0, 3)), np.zeros((0, 3))
        if self.ptree is None or not len(world) or len(self.pmap) < 3:
            return empty
        k = min(6, len(self.pmap))
        d, idx = self.ptree.query(world, k=k)
        a = self.pmap[idx[:, 0]]
        ab = self.pmap[idx[:, 1]] - a
        tol = 1e-9 * np.maximum(1.0, np.einsum("ij,ij->i", ab, ab))
        normal = np.full((len(world), 3), np.nan)
        todo = d[:, 2] <= self.gate
        # third point: the nearest one not collinear with the first two
        for j in range(2, k):
            cand = todo & (d[:, j] <= self.gate)
            if not cand.any():
                break
            c = np.cross(ab[cand], self.pmap[idx[cand, j]] - a[cand])
            nn = np.linalg.norm(c, axis=1)
            good = nn > tol[cand]
            rows = np.flatnonzero(cand)[good]
            normal[rows] = c[good] / nn[good, None]
            todo[rows] = False
        rows = np.flatnonzero(~np.isnan(normal[:, 0]))
        return rows, normal[rows], a[rows]

    def _lines(self, world):
        if self.etree is None or len(self.emap) < 2 or not len(world):
            return np.zeros(0, int), np.zeros((0, 3)), np.zeros((0, 3))
        d, idx = self.etree.query(world, k=2)
        ok = d[:, 1] <= self.gate
        a = self.emap[idx[:, 0]]
        b = self.emap[idx[:, 1]]
        u = b - a
        ln = np.linalg.norm(u, axis=1)
        ok &= ln > 1e-9
        rows = np.flatnonzero(ok)
        return rows, u[rows] / ln[rows, None], a[rows]

    def correspond(self, x):
        R = _rot(x[3])
        t = x[:3]
        pw = self.planar_s @ R.T + t if len(self.planar_s) else np.zeros((0, 3))
        ew = self.edge_s @ R.T + t if len(self.edge_s) else np.zeros((0, 3))
        return self._planes(pw), self._lines(ew)

    def residual(self, x, corr) -> tuple[float, int]:
        (pr, pn, pa), (er, eu, ea) = corr
        R = _rot(x[3])
        t = x[:3]
        dist = []
        if len(pr):
            pw = self.planar_s[pr] @ R.T + t
            dist.append(np.abs(np.einsum("ij,ij->i", pn, pw - pa)))
        if len(er):
            ew = self.edge_s[er] @ R.T + t
            v = ew - ea
            perp = v - np.einsum("ij,ij->i", v, eu)[:, None] * eu
            dist.append(np.linalg.norm(perp, axis=1))
        if not dist:
            return math.inf, 0
        allv = np.minimum(np.concatenate(dist), self.trunc)
        return float(allv.mean()), len(allv)

    def weights(self, x, corr):
        """IRLS weights ``1 / max(d, floor)`` so the squared solve tracks the mean distance.

        Correspondences beyond the truncation distance get zero weight.
        """
        (pr, pn, pa), (er, eu, ea) = corr
        R = _rot(x[3])
        t = x[:3]
        w = []
        if len(pr):
            pw = self.planar_s[pr] @ R.T + t
            w.append(self._irls(np.abs(np.einsum("ij,ij->i", pn, pw - pa))))
        if len(er):
            ew = self.edge_s[er] @ R.T + t
            v = ew - ea
            perp = v - np.einsum("ij,ij->i", v, eu)[:, None] * eu
            w.append(np.repeat(self._irls(np.linalg.norm(perp, axis=1)), 3))
        return np.concatenate(w)

    def _irls(self, d):
        return np.where(d < self.trunc, 1.0 / np.maximum(d, self.floor), 0.0)

    def linearize(self, x, corr):
        (pr, pn, pa), (er, eu, ea) = corr
        R = _rot(x[3])
        dR = _drot(x[3])
        t = x[:3]
        J_parts, r_parts = [], []
        if len(pr):
            q = self.planar_s[pr]
            pw = q @ R.T + t
            dth = q @ dR.T
            J = np.concatenate([pn, np.einsum("ij,ij->i", pn, dth)[:, None]], axis=1)
            J_parts.append(J)
            r_parts.append(np.einsum("ij,ij->i", pn, pw - pa))
        if len(er):
            q = self.edge_s[er]
            ew = q @ R.T + t
            dth = q @ dR.T
            P = np.eye(3)[None] - eu[:, :, None] * eu[:, None, :]
            e = np.einsum("nij,nj->ni", P, ew - ea)
            Jt = P
            Jth = np.einsum("nij,nj->ni", P, dth)
            J = np.concatenate([Jt, Jth[:, :, None]], axis=2).reshape(-1, 4)
            J_parts.append(J)
            r_parts.append(e.reshape(-1))
        return np.concatenate(J_parts), np.concatenate(r_parts)


_LAM_MAX = 1e6


def register_scan(scan: ScanPointCloud, umap: UnifiedMap, init: Pose,
                  params: RegistrationParams = RegistrationParams(),
                  features: FeatureParams = FeatureParams()) -> RegistrationResult:
    """Iteratively align ``scan`` to ``umap`` starting from ``init``.

    The residual is the mean point-to-line / point-to-plane distance with each
    term capped at ``outlier_dist``.  The normal equations are reweighted by
    inverse distance so each step minimizes that mean rather than a sum of
    squares, which a few mid-range mismatches would otherwise bias.  Steps
    that would raise the residual are rejected and the damping is raised, so
    the residual history is non-increasing; once the damping saturates the
    point is treated as stationary.
    """
    pts, labels = extract_features(scan, init, features, frame="sensor")
    lab = np.array(labels)
    prob = _Problem(pts[lab == EDGE], pts[lab != EDGE], umap, params.corr_max_dist,
                    params.outlier_dist, params.irls_floor)
    x = np.array([init.x, init.y, init.z, init.yaw], dtype=float)
    corr = prob.correspond(x)
    res, n = prob.residual(x, corr)
    if n == 0:
        return RegistrationResult(init, False, 0, math.inf, NO_CORRESPONDENCES)
    history = [res]
    lam = 1e-4
    converged = False
    last = (math.inf, math.inf)
    it = 0
    while it < params.max_iterations:
        it += 1
        J, r = prob.linearize(x, corr)
        w = prob.weights(x, corr)
        H = J.T @ (J * w[:, None])
        g = J.T @ (r * w)
        reg = np.diag(np.diag(H)) + 1e-9 * np.eye(4)
        try:
            dx = -np.linalg.solve(H + lam * reg, g)
            # convergence is judged on the undamped increment: heavy damping
            # after rejected steps shrinks dx without the solve being done
            gn = -np.linalg.solve(H + 1e-9 * reg, g)
        except np.linalg.LinAlgError:
            break
        step_t = float(np.linalg.norm(gn[:3]))
        step_r = abs(float(gn[3]))
        small = step_t < params.epsilon_trans and step_r < params.epsilon_rot
        cand = x + dx
        cand_corr = prob.correspond(cand)
        cand_res, cand_n = prob.residual(cand, cand_corr)
        if cand_n == 0 or cand_res > res:
            lam *= 10.0
            if small:
                # no admissible move left at this scale: stationary point
                last = (step_t, step_r)
                converged = True
                break
            if lam >= _LAM_MAX:
                # even micrometre steps raise the residual: a kink minimum of
                # the capped cost, where the reweighted solve never shrinks
                last = (float(np.linalg.norm(dx[:3])), abs(float(dx[3])))
                converged = last[0] < params.epsilon_trans and last[1] < params.epsilon_rot
                break
            continue
        x, corr, res = cand, cand_corr, cand_res
        history.append(res)
        lam = max(lam / 10.0, 1e-9)
        last = (step_t, step_r)
        if small:
            converged = True
            break
    pose = Pose(x[0], x[1], x[2], x[3])
    n_corr = prob.residual(x, corr)[1]
    if not converged:
        log.warning("registration did not converge after %d iterations", it)
        return RegistrationResult(pose, False, it, res, NOT_CONVERGED, last, history, n_corr)
    if res > params.residual_reject:
        log.warning("registration converged to residual %.3f above rejection threshold", res)
        return RegistrationResult(pose, False, it, res, RESIDUAL_REJECTED, last, history, n_corr)
    if n_corr < params.min_overlap * len(pts):
        # the capped mean can look fine when only a sliver of the scan matches
        log.warning("registration matched %d of %d features", n_corr, len(pts))
        return RegistrationResult(pose, False, it, res, LOW_OVERLAP, last, history, n_corr)
    return RegistrationResult(pose, True, it, res, None, last, history, n_corr)


def colocalize(aerial_scan: ScanPointCloud, shared_map: UnifiedMap, ground_pose: Pose,
               extrinsics: Pose, params: RegistrationParams = RegistrationParams(),
               features: FeatureParams = FeatureParams()) -> RegistrationResult:
    """Register the carried robot's scan seeded by the carrier's pose and mount offset."""
    init = ground_pose.compose(extrinsics)
    if not len(shared_map):
        return RegistrationResult(init, False, 0, math.inf, NO_CORRESPONDENCES)
    return register_scan(aerial_scan, shared_map, init, params, features)
