#!/usr/bin/env python3
"""Eval-count / IoU sweep over the bundled scenes.

Runs every variant (and every octree threshold) against a brute-force
reference per scene and resolution, writes results/bench.csv, and prints the
accuracy/speed table grouped by scene.

    python3 scripts/bench_sweep.py --resolution 128 --resolution 256
"""

import argparse
import csv
from pathlib import Path

from isofield.cli import main as cli_main

SCENES = ["sphere", "torus", "capsule_figure", "thin_rod", "thin_slab"]


def summarize(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    width = max(len(r["scene"]) for r in rows)
    print(f"\n{'scene':<{width}}  {'variant':<22} {'R':>4} {'evals':>10} {'accel':>8} {'IoU':>9}")
    for r in rows:
        name = r["variant"] + (f"@{r['threshold']}" if r["threshold"] else "")
        print(f"{r['scene']:<{width}}  {name:<22} {r['R_L']:>4} {r['total_evals']:>10} {float(r['accel_factor']):>8.1f} {float(r['iou']):>9.5f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scene", action="append", help=f"default: {' '.join(SCENES)}")
    ap.add_argument("--resolution", action="append", type=int)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    argv = ["bench", "--out", str(args.out), "--workers", str(args.workers)]
    for s in args.scene or SCENES:
        argv += ["--scene", s]
    for r in args.resolution or [128]:
        argv += ["--resolution", str(r)]
    code = cli_main(argv)
    if code == 0:
        summarize(args.out / "bench.csv")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
