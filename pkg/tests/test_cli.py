from __future__ import annotations

import subprocess
import sys

import pytest

from marsupex.cli import main


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["run", "room", "--config", "ground_only", "--out", str(out)])
    assert code == 0
    return out


def test_run_writes_outputs(run_dir, capsys):
    for name in ("events.log", "metrics", "scenario.yaml", "map.blocks", "voxels.txt",
                 "graph_ground.txt", "graph_aerial.txt", "graph_deployment.txt"):
        assert (run_dir / name).exists()
    metrics = (run_dir / "metrics").read_text()
    assert metrics.startswith("status=complete")


def test_export_map(run_dir, capsys):
    assert main(["export-map", str(run_dir)]) == 0
    assert "points=" in capsys.readouterr().out
    pts = (run_dir / "map_points.xyz").read_text().splitlines()
    assert pts and all(len(line.split()) == 4 for line in pts)
    assert (run_dir / "map_surface.stl").read_text().startswith("solid")


def test_unknown_scenario_exit_1(capsys):
    assert main(["run", "no_such_place"]) == 1
    assert "error" in capsys.readouterr().err


def test_bad_override_exit_1(capsys):
    assert main(["run", "room", "--set", "mission.drop=2"]) == 1


def test_cap_exit_code():
    assert main(["run", "room", "--config", "ground_only", "--set", "mission.cap_factor=0.005"]) == 3


def test_console_entry_point_runs():
    r = subprocess.run([sys.executable, "-m", "marsupex.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "export-map" in r.stdout
