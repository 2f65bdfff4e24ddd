from __future__ import annotations

import math

import numpy as np
import pytest

from marsupex.scenario import (ScenarioError, apply_overrides, builtin_names, load_named,
                               load_scenario, region_mask)
from marsupex.worldsim import FREE, OCCUPIED, Pose, traversable

ROOM = """
name: tiny
resolution: 0.25
world:
  size: [4, 3, 2]
  boxes:
    - {min: [2, 0, 0], max: [2.25, 1.5, 2]}
start: [1, 1, 90]
"""


def test_builtins_all_load():
    assert builtin_names() == ["blocked_corridor", "mezzanine", "room", "ybranch"]
    for name in builtin_names():
        sc = load_named(name)
        assert sc.name == name
        assert sc.world.cells[tuple(sc.world.index_of(sc.start_pose.position))] == FREE


def test_room_geometry_and_start():
    sc = load_scenario(ROOM)
    g = sc.world
    assert g.dims == (18, 14, 10)
    assert (g.cells[0] == OCCUPIED).all() and (g.cells[:, :, 0] == OCCUPIED).all()
    assert g.cells[tuple(g.index_of((2.1, 0.5, 1.0)))] == OCCUPIED
    assert g.cells[tuple(g.index_of((2.1, 2.5, 1.0)))] == FREE
    assert sc.start_pose.z == pytest.approx(0.5)
    assert sc.start_pose.yaw == pytest.approx(math.pi / 2)
    assert np.allclose(sc.global_bbox[1], [4.0, 3.0, 2.0])


def test_start_inside_wall_rejected():
    with pytest.raises(ScenarioError, match="start"):
        load_scenario(ROOM.replace("start: [1, 1, 90]", "start: [2.1, 0.5, 0]"))


def test_start_outside_world_rejected():
    with pytest.raises(ScenarioError):
        load_scenario(ROOM.replace("start: [1, 1, 90]", "start: [40, 1, 0]"))


def test_parse_error_reports_line():
    with pytest.raises(ScenarioError, match="line"):
        load_scenario("name: x\nworld: {size: [1, 2\n")


@pytest.mark.parametrize("bad, where", [
    ("world: {size: [4, 3]}", "world.size"),
    ("world: {size: [4.1, 3, 2]}", "multiple"),
    ("config: {planner: {bogus: 1}}", "bogus"),
    ("config: {nonsense: {}}", "nonsense"),
    ("config: {mission: {policy: fly}}", "policy"),
    ("robots: {ground: {endurance: -1}}", "robots.ground"),
])
def test_invalid_fields_rejected(bad, where):
    key = bad.split(":")[0]
    lines = [ln for ln in ROOM.strip().splitlines() if not ln.startswith(key) and not ln.startswith("  ")]
    if key != "world":
        lines += [ln for ln in ROOM.strip().splitlines() if ln.startswith("world") or ln.startswith("  ")]
    with pytest.raises(ScenarioError, match=where):
        load_scenario("\n".join(lines + [bad]))


def test_overrides_and_section_prefix():
    sc = load_scenario(ROOM, ["mission.policy=home", "config.planner.n_samples=33",
                              "robots.aerial.endurance=10"])
    assert sc.config.mission.policy == "home"
    assert sc.config.planner.n_samples == 33
    assert sc.aerial.endurance == 10
    doc = apply_overrides({}, ["marsupial.r_m=3.5"])
    assert doc == {"config": {"marsupial": {"r_m": 3.5}}}
    with pytest.raises(ScenarioError):
        apply_overrides({}, ["no_equals_sign"])


def test_layers_world():
    text = """
resolution: 0.5
world:
  layers:
    - |
      ....
      .##.
      ....
    - |
      ....
      ....
      ....
start: [0.25, 0.25, 0]
"""
    sc = load_scenario(text)
    g = sc.world
    assert g.dims == (6, 5, 4)
    assert g.cells[2, 2, 1] == OCCUPIED and g.cells[2, 2, 2] == FREE


def test_mezzanine_ledge_is_one_metre():
    sc = load_named("mezzanine")
    g = sc.world
    col = g.cells[tuple(g.index_of((20.0, 7.5, 0.0)))[:2]]
    top = g.origin[2] + np.flatnonzero(col == FREE)[0] * g.resolution
    assert top == pytest.approx(1.0)
    low, high = Pose(14.0, 10.0, 0.5), Pose(16.5, 10.0, 1.5)
    assert not traversable(g, low, high, sc.ground)
    assert traversable(g, Pose(14.0, 10.0, 2.0), Pose(16.5, 10.0, 2.0), sc.aerial)
    assert region_mask(g, sc.regions["platform"]).sum() > 0


def test_blocked_corridor_blockage():
    sc = load_named("blocked_corridor")
    g = sc.world
    box = sc.regions["blockage"]
    assert (g.cells[region_mask(g, box)] == OCCUPIED).all()
    assert box[1][2] == pytest.approx(1.2)
