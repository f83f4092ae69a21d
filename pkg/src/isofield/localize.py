"""Surface extraction strategies on hierarchical node grids.

Four variants produce a binarized occupancy volume at the target level:

* ``brute``: dense evaluation of every target node.
* ``octree_binarized``: refine only cells whose binarized corners disagree.
* ``octree_threshold``: refine cells whose corner values spread by more than
  a threshold.
* ``progressive``: binarize, upsample, evaluate the fractional band plus a
  1-ring, then chase conflicts between interpolation and evaluation until
  none remain.

All variants fully evaluate the coarsest level and account for every oracle
call they make.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .field import FieldOracle
from .grid import (
    EVALUATED,
    LevelGrid,
    binarize_values,
    boundary_candidates,
    cell_corner_range,
    cells_to_fine_nodes,
    children_of,
    dilate_1ring,
    upsample_values,
)

log = logging.getLogger(__name__)

VARIANTS = ("brute", "octree_binarized", "octree_threshold", "progressive")
SWEEP_THRESHOLDS = (0.05, 0.08, 0.12, 0.2, 0.3, 0.4)
MAX_RESOLUTION = 1024


@dataclass
class AlgoConfig:
    variant: str = "progressive"
    threshold: float | None = None
    coarsest: int = 16
    levels: int = 3
    max_conflict_iters: int | None = None  # None -> R_l of the level being refined
    conflict_pass: bool = True  # ablation switch for the progressive variant
    workers: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.coarsest < 1 or self.levels < 0:
            raise ValueError("coarsest must be >= 1 and levels >= 0")
        if self.resolution > MAX_RESOLUTION:
            raise ValueError(f"target resolution {self.resolution} exceeds {MAX_RESOLUTION}")
        if self.variant == "octree_threshold":
            if self.threshold is None or not (0.0 < self.threshold < 0.5):
                raise ValueError("octree_threshold needs a threshold in (0, 0.5)")
        elif self.threshold is not None:
            raise ValueError(f"threshold only applies to octree_threshold, not {self.variant}")

    @property
    def resolution(self) -> int:
        return self.coarsest * 2**self.levels

    @classmethod
    def for_resolution(cls, resolution: int, coarsest: int = 16, **kw) -> "AlgoConfig":
        ratio = resolution // coarsest
        if resolution % coarsest or ratio & (ratio - 1):
            raise ValueError(f"resolution {resolution} is not coarsest ({coarsest}) times a power of two")
        return cls(coarsest=coarsest, levels=int(math.log2(ratio)), **kw)


@dataclass
class ExtractionResult:
    variant: str
    final_grid: LevelGrid
    evals_per_level: list[int]
    wall_time: float
    conflict_limit_hit: bool = False
    threshold: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def total_evals(self) -> int:
        return sum(self.evals_per_level)

    @property
    def binarized(self) -> np.ndarray:
        return self.final_grid.values >= 0.5

    @property
    def resolution(self) -> int:
        return self.final_grid.cells


def evaluate_nodes(oracle: FieldOracle, grid: LevelGrid, mask: np.ndarray, workers: int = 1) -> int:
    """Evaluate masked nodes in place; returns the number of oracle calls."""
    n = int(np.count_nonzero(mask))
    if n:
        grid.values[mask] = oracle.occupancy(grid.node_points(mask), workers=workers)
        grid.states[mask] = EVALUATED
    return n


def evaluate_level0(oracle: FieldOracle, cfg: AlgoConfig) -> LevelGrid:
    grid = LevelGrid.empty(0, cfg.coarsest)
    evaluate_nodes(oracle, grid, np.ones(grid.values.shape, dtype=bool), cfg.workers)
    return grid


def _refined_grid(coarse: LevelGrid, fine_values: np.ndarray) -> LevelGrid:
    """Fine grid holding ``fine_values`` except at evaluated even nodes, which keep the oracle value."""
    states = np.ones(fine_values.shape, dtype=np.uint8)  # INTERPOLATED
    states[0::2, 0::2, 0::2] = coarse.states
    values = fine_values.copy()
    even = values[0::2, 0::2, 0::2]
    ev = coarse.states == EVALUATED
    even[ev] = coarse.values[ev]
    return LevelGrid(coarse.level + 1, coarse.coarsest, values, states)


# -- brute force ------------------------------------------------------------------


def extract_brute_force(oracle: FieldOracle, cfg: AlgoConfig) -> ExtractionResult:
    t0 = time.perf_counter()
    grid = LevelGrid.empty(cfg.levels, cfg.coarsest)
    n = evaluate_nodes(oracle, grid, np.ones(grid.values.shape, dtype=bool), cfg.workers)
    evals = [0] * cfg.levels + [n]
    return ExtractionResult("brute", grid, evals, time.perf_counter() - t0)


# -- binarized octree -----------------------------------------------------------


def _disagreeing_cells(values: np.ndarray) -> np.ndarray:
    lo, hi = cell_corner_range(binarize_values(values))
    return lo != hi


def extract_octree_binarized(oracle: FieldOracle, cfg: AlgoConfig) -> ExtractionResult:
    t0 = time.perf_counter()
    grid = evaluate_level0(oracle, cfg)
    evals = [grid.values.size]
    active = _disagreeing_cells(grid.values)
    for _ in range(cfg.levels):
        fine_guess = binarize_values(upsample_values(binarize_values(grid.values)))
        grid = _refined_grid(grid, fine_guess)
        todo = cells_to_fine_nodes(active) & ~grid.evaluated
        evals.append(evaluate_nodes(oracle, grid, todo, cfg.workers))
        # children of refined cells have all corners evaluated
        active = children_of(active) & _disagreeing_cells(grid.values)
    return ExtractionResult("octree_binarized", grid, evals, time.perf_counter() - t0)


# -- threshold octree -----------------------------------------------------------


def extract_octree_threshold(oracle: FieldOracle, cfg: AlgoConfig) -> ExtractionResult:
    t0 = time.perf_counter()
    t = cfg.threshold
    grid = evaluate_level0(oracle, cfg)
    evals = [grid.values.size]
    active = np.ones((cfg.coarsest,) * 3, dtype=bool)
    for _ in range(cfg.levels):
        lo, hi = cell_corner_range(grid.values)
        refine = active & (hi - lo > t)
        grid = _refined_grid(grid, upsample_values(grid.values))
        todo = cells_to_fine_nodes(refine) & ~grid.evaluated
        evals.append(evaluate_nodes(oracle, grid, todo, cfg.workers))
        active = children_of(refine)
    return ExtractionResult("octree_threshold", grid, evals, time.perf_counter() - t0, threshold=t)


# -- progressive localization ---------------------------------------------------


@dataclass
class RefineStats:
    candidate_evals: int = 0
    conflict_evals: int = 0
    conflict_iters: int = 0
    limit_hit: bool = False

    @property
    def evals(self) -> int:
        return self.candidate_evals + self.conflict_evals


def progressive_refine(oracle: FieldOracle, coarse: LevelGrid, cfg: AlgoConfig):
    """One coarse-to-fine step. Returns ``(fine_grid, RefineStats)``."""
    interp = upsample_values(binarize_values(coarse.values))
    fine = _refined_grid(coarse, interp)
    stats = RefineStats()

    candidates = dilate_1ring(boundary_candidates(interp))
    todo = candidates & ~fine.evaluated
    stats.candidate_evals = evaluate_nodes(oracle, fine, todo, cfg.workers)
    if not cfg.conflict_pass:
        return fine, stats

    interp_inside = interp >= 0.5
    limit = cfg.max_conflict_iters if cfg.max_conflict_iters is not None else fine.cells
    fresh = todo
    while True:
        conflicts = fresh & ((fine.values >= 0.5) != interp_inside)
        if not conflicts.any():
            break
        if stats.conflict_iters >= limit:
            stats.limit_hit = True
            log.warning("conflict pass hit its %d-iteration limit at level %d", limit, fine.level)
            break
        fresh = dilate_1ring(conflicts) & ~fine.evaluated
        if not fresh.any():
            break
        stats.conflict_evals += evaluate_nodes(oracle, fine, fresh, cfg.workers)
        stats.conflict_iters += 1
    return fine, stats


def progressive_to_level(oracle: FieldOracle, cfg: AlgoConfig, level: int):
    """Run the progressive scheme from level 0 up to ``level``; returns grid, evals, stats."""
    grid = evaluate_level0(oracle, cfg)
    evals = [grid.values.size]
    all_stats = []
    for _ in range(level):
        grid, st = progressive_refine(oracle, grid, cfg)
        evals.append(st.evals)
        all_stats.append(st)
    return grid, evals, all_stats


def extract_progressive(oracle: FieldOracle, cfg: AlgoConfig) -> ExtractionResult:
    t0 = time.perf_counter()
    grid, evals, stats = progressive_to_level(oracle, cfg, cfg.levels)
    return ExtractionResult(
        "progressive",
        grid,
        evals,
        time.perf_counter() - t0,
        conflict_limit_hit=any(s.limit_hit for s in stats),
        extras={"conflict_evals": [s.conflict_evals for s in stats], "conflict_iters": [s.conflict_iters for s in stats]},
    )


EXTRACTORS = {
    "brute": extract_brute_force,
    "octree_binarized": extract_octree_binarized,
    "octree_threshold": extract_octree_threshold,
    "progressive": extract_progressive,
}


def extract(oracle: FieldOracle, cfg: AlgoConfig) -> ExtractionResult:
    return EXTRACTORS[cfg.variant](oracle, cfg)


# -- accounting -------------------------------------------------------------------


def compare_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"volume shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def acceleration_factor(result: ExtractionResult, brute_result: ExtractionResult) -> float:
    if result.resolution != brute_result.resolution:
        raise ValueError("results are at different target resolutions")
    if result.total_evals == 0 or brute_result.total_evals == 0:
        raise ZeroDivisionError("acceleration factor undefined for zero evaluations")
    return brute_result.total_evals / result.total_evals
