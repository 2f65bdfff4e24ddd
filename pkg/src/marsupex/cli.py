"""Command line entry point: ``marsupex run|compare|export-map``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .mapstore import EDGE, decode_blocks, encode_blocks
from .mission import compare_runs, compare_table, run_mission
from .scenario import ScenarioError, builtin_names, load_named
from .worldsim import export_surface, export_voxels, parse_voxels

CONFIGS = ("marsupial", "ground_only", "aerial_only")


def _load(args):
    overrides = list(args.set or ())
    if getattr(args, "policy", None):
        overrides.append(f"mission.policy={args.policy}")
    return load_named(args.scenario, overrides)


def cmd_run(args) -> int:
    sc = _load(args)
    mission = run_mission(sc, args.seed, args.config, wall_cap=args.wall_cap)
    lines = mission.metrics.lines()
    print("\n".join(lines))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "events.log").write_text(mission.event_log())
        (out / "metrics").write_text("\n".join(lines) + "\n")
        (out / "scenario.yaml").write_text(yaml.safe_dump(sc.document, sort_keys=True))
        (out / "map.blocks").write_bytes(encode_blocks(mission.merged_map().blocks.values()))
        (out / "voxels.txt").write_text(export_voxels(mission.merged_grid()))
        (out / "graph_ground.txt").write_text(mission.ground.graph.to_text())
        (out / "graph_aerial.txt").write_text(mission.aerial.graph.to_text())
        (out / "graph_deployment.txt").write_text(mission.gm.to_text())
    return mission.exit_code()


def cmd_compare(args) -> int:
    sc = _load(args)
    print(compare_table(compare_runs(sc, args.seed)), end="")
    return 0


def cmd_export_map(args) -> int:
    run = Path(args.run_dir)
    doc = yaml.safe_load((run / "scenario.yaml").read_text())
    res = float(doc.get("resolution", 0.25))
    blocks = decode_blocks((run / "map.blocks").read_bytes(), res)
    rows = []
    for blk in blocks:
        for label in ("edge", "planar"):
            for p in blk.points(label):
                rows.append((p[0], p[1], p[2], label))
    rows.sort()
    with open(run / "map_points.xyz", "w") as fh:
        for x, y, z, label in rows:
            fh.write(f"{x:.3f} {y:.3f} {z:.3f} {label}\n")
    grid = parse_voxels((run / "voxels.txt").read_text())
    (run / "map_surface.stl").write_text(export_surface(grid, doc.get("name", "map")))
    n_edge = sum(1 for r in rows if r[3] == EDGE)
    print(f"points={len(rows)} edge={n_edge} planar={len(rows) - n_edge} "
          f"occupied={int(np.count_nonzero(grid.cells == 2))}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="marsupex", description="Marsupial ground/aerial exploration simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def scenario_args(p):
        p.add_argument("scenario", help=f"built-in name ({', '.join(builtin_names())}) or YAML path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a scenario or config value, e.g. mission.dt=0.2")

    run = sub.add_parser("run", help="run one mission")
    scenario_args(run)
    run.add_argument("--policy", choices=("continue", "wait", "home"))
    run.add_argument("--config", choices=CONFIGS, default="marsupial")
    run.add_argument("--out", help="directory for events.log, metrics and exports")
    run.add_argument("--wall-cap", type=float, default=None, help="wall-clock limit in seconds")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="run all three configurations and tabulate")
    scenario_args(cmp_)
    cmp_.set_defaults(func=cmd_compare)

    exp = sub.add_parser("export-map", help="write point cloud and surface mesh for a run directory")
    exp.add_argument("run_dir")
    exp.set_defaults(func=cmd_export_map)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
