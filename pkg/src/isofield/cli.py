"""Command-line front end: extract, render, bench, metrics and ohem-demo.

Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.

The stats CSV written by ``extract`` and ``bench`` has the fixed header::

    scene,variant,threshold,R_L,total_evals,accel_factor,iou,wall_ms

``threshold`` is empty for variants without one. ``accel_factor`` and ``iou``
compare against a brute-force run of the same scene and resolution.
``wall_ms`` is informative only and is the one column allowed to change
between identical runs.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .field import BUNDLED_SCENES, NoTextureError, SceneError, build_oracle, load_scene
from .localize import SWEEP_THRESHOLDS, VARIANTS, AlgoConfig, acceleration_factor, compare_iou, extract
from .mesh import chamfer_distance, export_obj, hausdorff_distance, load_obj, marching_cubes, p2s_distance, sample_surface
from .ohem_toy import BUNDLED_DATASETS, DATASET_DIR, DatasetSpec, fit_toy_predictor, make_dataset
from .render import CameraSpec, render_view, write_ppm

log = logging.getLogger("isofield")

STATS_HEADER = ["scene", "variant", "threshold", "R_L", "total_evals", "accel_factor", "iou", "wall_ms"]
METRICS_HEADER = ["scene", "variant", "R_L", "chamfer", "p2s", "hausdorff", "n_samples"]
OHEM_HEADER = ["cluster", "method", "iou", "epoch", "seed"]
DEFAULT_SEED = 42


class UsageError(ValueError):
    """Bad flags or configuration; maps to exit code 2."""


@dataclass
class RunConfig:
    command: str
    scenes: list = field(default_factory=list)
    variants: list = field(default_factory=list)
    thresholds: list = field(default_factory=list)
    resolutions: list = field(default_factory=list)
    coarsest: int = 16
    camera: CameraSpec = field(default_factory=CameraSpec)
    out: Path = Path("out")
    seed: int = DEFAULT_SEED
    workers: int = 1
    epochs: int = 40
    dataset: str = "toy_imbalanced"
    n_seeds: int = 5
    depth: bool = False
    pred: Path | None = None
    gt: Path | None = None
    samples: int = 10_000


# -- helpers --------------------------------------------------------------------------


def resolve_scene(ref: str):
    """A scene is a JSON path or the name of a bundled scene."""
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        if not path.exists():
            raise UsageError(f"scene file not found: {ref}")
        return load_scene(path)
    bundled = BUNDLED_SCENES / f"{ref}.json"
    if not bundled.exists():
        names = ", ".join(sorted(p.stem for p in BUNDLED_SCENES.glob("*.json")))
        raise UsageError(f"unknown scene {ref!r}; give a JSON path or one of: {names}")
    return load_scene(bundled)


def resolve_dataset(ref: str) -> DatasetSpec:
    if ref in BUNDLED_DATASETS:
        return DatasetSpec.load(DATASET_DIR / f"{ref}.json")
    path = Path(ref)
    if not path.exists():
        raise UsageError(f"unknown dataset {ref!r}; give a JSON path or one of: {', '.join(BUNDLED_DATASETS)}")
    return DatasetSpec.load(path)


def _algo(variant: str, threshold, resolution: int, cfg: RunConfig) -> AlgoConfig:
    return AlgoConfig.for_resolution(resolution, coarsest=cfg.coarsest, variant=variant, threshold=threshold, workers=cfg.workers)


def _fmt_threshold(t) -> str:
    return "" if t is None else f"{t:g}"


def _stats_row(scene, result, brute, wall_ms) -> dict:
    return {
        "scene": scene,
        "variant": result.variant,
        "threshold": _fmt_threshold(result.threshold),
        "R_L": result.resolution,
        "total_evals": result.total_evals,
        "accel_factor": f"{acceleration_factor(result, brute):.4f}",
        "iou": f"{compare_iou(result.binarized, brute.binarized):.6f}",
        "wall_ms": f"{wall_ms:.1f}",
    }


def _write_csv(path: Path, header, rows, append: bool = False) -> None:
    new = not append or not path.exists() or path.stat().st_size == 0
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        if new:
            w.writeheader()
        w.writerows(rows)


def _timed_extract(oracle, algo):
    t0 = time.perf_counter()
    res = extract(oracle, algo)
    return res, 1000.0 * (time.perf_counter() - t0)


def _artifact_stem(scene: str, variant: str, threshold, resolution: int) -> str:
    t = f"_t{threshold:g}" if threshold is not None else ""
    return f"{scene}_{variant}{t}_{resolution}"


# -- commands ---------------------------------------------------------------------------


def cmd_extract(cfg: RunConfig) -> int:
    spec = resolve_scene(cfg.scenes[0])
    print(f"scene {spec.name}: tau = {spec.sharpness:g}")
    variant = cfg.variants[0]
    threshold = cfg.thresholds[0] if cfg.thresholds else None
    resolution = cfg.resolutions[0]
    algo = _algo(variant, threshold, resolution, cfg)
    oracle = build_oracle(spec)
    result, wall = _timed_extract(oracle, algo)
    if result.conflict_limit_hit:
        log.warning("%s: conflict pass stopped at its iteration limit", spec.name)
    if variant == "brute":
        brute = result
    else:
        brute, _ = _timed_extract(build_oracle(spec), _algo("brute", None, resolution, cfg))
    cfg.out.mkdir(parents=True, exist_ok=True)
    stem = _artifact_stem(spec.name, variant, threshold, resolution)
    mesh = marching_cubes(result.final_grid)
    export_obj(mesh, cfg.out / f"{stem}.obj")
    row = _stats_row(spec.name, result, brute, wall)
    _write_csv(cfg.out / "stats.csv", STATS_HEADER, [row], append=True)
    print(f"{stem}: {row['total_evals']} evals, accel {row['accel_factor']}, IoU {row['iou']}, {len(mesh.triangles)} triangles")
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    rows = []
    for ref in cfg.scenes:
        spec = resolve_scene(ref)
        # results depend on the transition width, so it is reported with every run
        print(f"scene {spec.name}: tau = {spec.sharpness:g}")
        for resolution in cfg.resolutions:
            brute, brute_ms = _timed_extract(build_oracle(spec), _algo("brute", None, resolution, cfg))
            for variant in cfg.variants:
                thresholds = cfg.thresholds if variant == "octree_threshold" else [None]
                for t in thresholds:
                    if variant == "brute":
                        res, ms = brute, brute_ms
                    else:
                        res, ms = _timed_extract(build_oracle(spec), _algo(variant, t, resolution, cfg))
                    rows.append(_stats_row(spec.name, res, brute, ms))
                    print(",".join(str(rows[-1][k]) for k in STATS_HEADER))
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_csv(cfg.out / "bench.csv", STATS_HEADER, rows)
    return 0


def cmd_render(cfg: RunConfig) -> int:
    spec = resolve_scene(cfg.scenes[0])
    algo = _algo("progressive", None, cfg.resolutions[0], cfg)
    oracle = build_oracle(spec)
    image = render_view(oracle, cfg.camera, algo)
    cfg.out.mkdir(parents=True, exist_ok=True)
    cam = cfg.camera
    stem = f"{spec.name}_y{cam.yaw:g}_p{cam.pitch:g}_{algo.resolution}"
    write_ppm(cfg.out / f"{stem}.ppm", image.rgb)
    if cfg.depth:
        # little-endian float32, row-major, NaN where no surface was found
        image.depth.astype("<f4").tofile(cfg.out / f"{stem}.depth.f32")
    st = image.stats
    if st["grazing_pixels"]:
        log.warning("%s: %d pixels left fractional after the final pass; rendered as uncovered", spec.name, st["grazing_pixels"])
    print(
        f"{stem}: {int(image.mask.sum())} covered pixels, {st['oracle_calls']} oracle calls, "
        f"{st['shadow_nodes']} shadow nodes, {st['degenerate_brackets']} degenerate brackets"
    )
    return 0


def cmd_metrics(cfg: RunConfig) -> int:
    """Chamfer, P2S and Hausdorff of a mesh against a reference mesh.

    With --pred/--gt the two OBJ files are compared directly; otherwise each
    scene is extracted with the chosen variant and compared to brute force.
    """
    rows = []
    rng = np.random.default_rng(cfg.seed)
    if cfg.pred is not None or cfg.gt is not None:
        if cfg.pred is None or cfg.gt is None:
            raise UsageError("--pred and --gt must be given together")
        pairs = [(cfg.pred.stem, "obj", "", load_obj(cfg.pred), load_obj(cfg.gt))]
    else:
        pairs = []
        for ref in cfg.scenes:
            spec = resolve_scene(ref)
            resolution = cfg.resolutions[0]
            variant = cfg.variants[0]
            threshold = cfg.thresholds[0] if cfg.thresholds and variant == "octree_threshold" else None
            pred = extract(build_oracle(spec), _algo(variant, threshold, resolution, cfg))
            gt = extract(build_oracle(spec), _algo("brute", None, resolution, cfg))
            pairs.append((spec.name, variant, resolution, marching_cubes(pred.final_grid), marching_cubes(gt.final_grid)))
    for name, variant, resolution, pred, gt in pairs:
        if pred.is_empty or gt.is_empty:
            raise RuntimeError(f"{name}: cannot compare an empty mesh")
        a = sample_surface(pred, cfg.samples, seed=rng)
        b = sample_surface(gt, cfg.samples, seed=rng)
        rows.append(
            {
                "scene": name,
                "variant": variant,
                "R_L": resolution,
                "chamfer": f"{chamfer_distance(a, b):.8f}",
                "p2s": f"{p2s_distance(a, gt):.8f}",
                "hausdorff": f"{hausdorff_distance(a, gt):.8f}",
                "n_samples": cfg.samples,
            }
        )
        print(",".join(str(rows[-1][k]) for k in METRICS_HEADER))
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_csv(cfg.out / "metrics.csv", METRICS_HEADER, rows)
    return 0


def cmd_ohem_demo(cfg: RunConfig) -> int:
    spec = resolve_dataset(cfg.dataset)
    if cfg.epochs < 0 or cfg.n_seeds < 1:
        raise UsageError("--epochs must be >= 0 and --seeds >= 1")
    rows, gains = [], []
    for seed in range(cfg.seed, cfg.seed + cfg.n_seeds):
        items = make_dataset(spec, seed)
        uniform = fit_toy_predictor(items, False, cfg.epochs, seed)
        ohem = fit_toy_predictor(items, True, cfg.epochs, seed)
        for report in (uniform, ohem):
            rows += [{k: (f"{v:.6f}" if k == "iou" else v) for k, v in r.items()} for r in report.rows()]
        gains.append(ohem.worst - uniform.worst)
        print(f"seed {seed}: worst-cluster IoU uniform {uniform.worst:.4f}, ohem {ohem.worst:.4f}")
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_csv(cfg.out / "ohem.csv", OHEM_HEADER, rows)
    print(f"median worst-cluster gain over {len(gains)} seeds: {np.median(gains):+.4f}")
    return 0


COMMANDS = {
    "extract": cmd_extract,
    "render": cmd_render,
    "bench": cmd_bench,
    "metrics": cmd_metrics,
    "ohem-demo": cmd_ohem_demo,
}


# -- argument parsing ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--workers", type=int, default=1, help="threads for oracle evaluation")
    common.add_argument("-v", "--verbose", action="store_true")

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--resolution", type=int, action="append", help="target cells per axis (repeatable for bench)")
    grid.add_argument("--coarsest", type=int, default=16, help="cells per axis at level 0")

    p = argparse.ArgumentParser(prog="isofield", description="Accelerated isosurface localization on analytic occupancy fields.")
    sub = p.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("extract", parents=[common, grid], help="extract a surface and export OBJ plus a stats row")
    ex.add_argument("--scene", required=True)
    ex.add_argument("--variant", default="progressive", choices=VARIANTS)
    ex.add_argument("--threshold", type=float)

    rd = sub.add_parser("render", parents=[common, grid], help="mesh-free render to PPM")
    rd.add_argument("--scene", required=True)
    rd.add_argument("--camera", default="0,0", help="yaw,pitch[,dist] in degrees")
    rd.add_argument("--depth", action="store_true", help="also dump the depth buffer as float32")

    bn = sub.add_parser("bench", parents=[common, grid], help="eval-count and IoU sweep over scenes and variants")
    bn.add_argument("--scene", action="append", required=True)
    bn.add_argument("--variant", action="append", choices=VARIANTS)
    bn.add_argument("--threshold", type=float, action="append")

    mt = sub.add_parser("metrics", parents=[common, grid], help="Chamfer / P2S / Hausdorff against brute force or a given mesh")
    mt.add_argument("--scene", action="append", default=[])
    mt.add_argument("--variant", default="progressive", choices=VARIANTS)
    mt.add_argument("--threshold", type=float)
    mt.add_argument("--pred", type=Path)
    mt.add_argument("--gt", type=Path)
    mt.add_argument("--samples", type=int, default=10_000)

    oh = sub.add_parser("ohem-demo", parents=[common], help="paired uniform vs OHEM runs on the 2D toy dataset")
    oh.add_argument("--dataset", default="toy_imbalanced", help=f"JSON path or one of: {', '.join(BUNDLED_DATASETS)}")
    oh.add_argument("--epochs", type=int, default=40)
    oh.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds starting at --seed")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    cfg = RunConfig(command=args.command, out=args.out, seed=args.seed, workers=args.workers)
    if args.command == "ohem-demo":
        cfg.dataset, cfg.epochs, cfg.n_seeds = args.dataset, args.epochs, args.seeds
        return cfg
    cfg.coarsest = args.coarsest
    cfg.resolutions = args.resolution or [128]
    scenes = args.scene if isinstance(args.scene, list) else [args.scene]
    cfg.scenes = scenes
    if args.command == "render":
        cfg.camera = CameraSpec.parse(args.camera)
        cfg.depth = args.depth
    elif args.command == "bench":
        cfg.variants = args.variant or list(VARIANTS)
        cfg.thresholds = args.threshold or list(SWEEP_THRESHOLDS)
    else:
        cfg.variants = [args.variant]
        cfg.thresholds = [args.threshold] if args.threshold is not None else []
        if args.variant == "octree_threshold" and not cfg.thresholds:
            raise UsageError("octree_threshold needs --threshold")
    if args.command == "metrics":
        cfg.pred, cfg.gt, cfg.samples = args.pred, args.gt, args.samples
        if not cfg.scenes and cfg.pred is None:
            raise UsageError("metrics needs --scene or --pred/--gt")
    if args.command != "bench" and len(cfg.resolutions) > 1:
        raise UsageError("--resolution may only be repeated for bench")
    for r in cfg.resolutions:
        # validates resolution / coarsest compatibility up front
        AlgoConfig.for_resolution(r, coarsest=cfg.coarsest)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.command](cfg)
    except (UsageError, SceneError, NoTextureError, ValueError) as exc:
        print(f"isofield {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"isofield {args.command}: runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
