"""Simulation of a marsupial ground/aerial robot team exploring voxel worlds.

Modules, bottom up: ``worldsim`` (grids, sensing, traversability),
``mapstore`` (block-partitioned feature maps), ``planner`` (graph-based
exploration), ``coloc`` (scan-to-map registration), ``marsupial``
(deployment logic and handoff) and ``mission`` (the two-agent executive).
"""
from __future__ import annotations

from ._backend import BACKEND
from .coloc import RegistrationParams, RegistrationResult, colocalize, register_scan
from .mapstore import UnifiedMap, diff_blocks, extract_features, merge_blocks, sync
from .mission import Mission, compare_runs, run_mission
from .planner import ExplorationGraph, PlannerParams, evaluate_gain, shortest_path
from .scenario import ScenarioError, ScenarioSpec, load_named, load_scenario
from .worldsim import Pose, RobotSpec, SensorSpec, VoxelGrid, raycast_scan, traversable

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "RegistrationParams", "RegistrationResult", "colocalize", "register_scan",
    "UnifiedMap", "diff_blocks", "extract_features", "merge_blocks", "sync",
    "Mission", "compare_runs", "run_mission", "ExplorationGraph", "PlannerParams",
    "evaluate_gain", "shortest_path", "ScenarioError", "ScenarioSpec", "load_named",
    "load_scenario", "Pose", "RobotSpec", "SensorSpec", "VoxelGrid", "raycast_scan", "traversable",
]
