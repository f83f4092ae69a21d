"""Dense multi-level node grids over the NDC cube.

Values live on cell corners. A grid at level ``l`` has ``R_l = R0 * 2**l``
cells and ``R_l + 1`` nodes per axis. Arrays are indexed ``[k, j, i]`` so the
flattened C-order layout is x-fastest. Node ``(i, j, k)`` sits at

    x = -1 + 2 i / R_l,   y = -1 + 2 j / R_l,   z = +1 - 2 k / R_l

which puts ``k = 0`` on the near plane; increasing ``k`` moves away from the
observer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

UNKNOWN, INTERPOLATED, EVALUATED, SHADOW = 0, 1, 2, 3
STATE_NAMES = {UNKNOWN: "unknown", INTERPOLATED: "interpolated", EVALUATED: "evaluated", SHADOW: "shadow"}

_RING = np.ones((3, 3, 3), dtype=bool)


@dataclass
class LevelGrid:
    level: int
    coarsest: int
    values: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        n = self.nodes
        if self.values.shape != (n, n, n) or self.states.shape != (n, n, n):
            raise ValueError(f"level {self.level} grid needs {n}^3 nodes, got {self.values.shape}")

    @classmethod
    def empty(cls, level: int, coarsest: int) -> "LevelGrid":
        n = coarsest * 2**level + 1
        return cls(level, coarsest, np.zeros((n, n, n)), np.zeros((n, n, n), dtype=np.uint8))

    @property
    def cells(self) -> int:
        return self.coarsest * 2**self.level

    @property
    def nodes(self) -> int:
        return self.cells + 1

    @property
    def cell_size(self) -> float:
        return 2.0 / self.cells

    def axis_coords(self):
        """Node coordinates along x (== y) and along the k (depth) axis."""
        n = self.cells
        idx = np.arange(n + 1)
        return -1.0 + 2.0 * idx / n, 1.0 - 2.0 * idx / n

    def node_points(self, mask: np.ndarray | None = None) -> np.ndarray:
        """NDC positions of the masked nodes in flat (x-fastest) order."""
        xs, zs = self.axis_coords()
        if mask is None:
            k, j, i = np.indices(self.values.shape).reshape(3, -1)
        else:
            k, j, i = np.nonzero(mask)
        return np.stack([xs[i], xs[j], zs[k]], axis=1)

    def copy(self) -> "LevelGrid":
        return LevelGrid(self.level, self.coarsest, self.values.copy(), self.states.copy())

    @property
    def evaluated(self) -> np.ndarray:
        return self.states == EVALUATED


def _upsample_axis(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    out = np.empty((2 * a.shape[0] - 1,) + a.shape[1:], dtype=a.dtype)
    out[0::2] = a
    out[1::2] = 0.5 * (a[:-1] + a[1:])
    return np.moveaxis(out, 0, axis)


def upsample_values(values: np.ndarray) -> np.ndarray:
    """Trilinear refinement of a node array; even-index nodes are exact copies."""
    out = values
    for axis in range(values.ndim):
        out = _upsample_axis(out, axis)
    return out


def upsample_interpolate(coarse: LevelGrid) -> LevelGrid:
    if (coarse.states == UNKNOWN).any():
        raise ValueError("cannot upsample a grid with unknown nodes")
    values = upsample_values(coarse.values)
    states = np.full(values.shape, INTERPOLATED, dtype=np.uint8)
    states[0::2, 0::2, 0::2] = coarse.states
    return LevelGrid(coarse.level + 1, coarse.coarsest, values, states)


def binarize_values(values: np.ndarray) -> np.ndarray:
    return (values >= 0.5).astype(float)


def binarize(grid: LevelGrid) -> LevelGrid:
    return LevelGrid(grid.level, grid.coarsest, binarize_values(grid.values), grid.states.copy())


def boundary_candidates(grid: LevelGrid | np.ndarray) -> np.ndarray:
    v = grid.values if isinstance(grid, LevelGrid) else grid
    return (v > 0.0) & (v < 1.0)


def dilate_1ring(mask: np.ndarray) -> np.ndarray:
    """26-connected (full 3x3x3) dilation, clipped at the grid border."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    structure = _RING if mask.ndim == 3 else np.ones((3,) * mask.ndim, dtype=bool)
    # work on the bounding box (+1 ring) only; conflict passes dilate small sets on big grids
    nz = [np.flatnonzero(mask.any(axis=tuple(a for a in range(mask.ndim) if a != ax))) for ax in range(mask.ndim)]
    box = tuple(slice(max(ix[0] - 1, 0), ix[-1] + 2) for ix in nz)
    out = np.zeros_like(mask)
    out[box] = ndimage.binary_dilation(mask[box], structure=structure)
    return out


def argmax_z(grid: LevelGrid | np.ndarray):
    """Per-column maximum along k and the smallest k that attains it.

    Returns two arrays indexed ``[j, i]``.
    """
    v = grid.values if isinstance(grid, LevelGrid) else np.asarray(grid)
    idx = np.argmax(v, axis=0)  # numpy returns the first occurrence on ties
    vmax = np.take_along_axis(v, idx[None], axis=0)[0]
    return vmax, idx


def cell_corner_range(values: np.ndarray):
    """Min and max of the 8 corner values of every cell."""
    corners = [
        values[a : values.shape[0] - 1 + a, b : values.shape[1] - 1 + b, c : values.shape[2] - 1 + c]
        for a in (0, 1)
        for b in (0, 1)
        for c in (0, 1)
    ]
    return np.minimum.reduce(corners), np.maximum.reduce(corners)


def cells_to_fine_nodes(cells: np.ndarray) -> np.ndarray:
    """Mask of all fine-level nodes (including corners) inside the flagged coarse cells."""
    n = cells.shape[0]
    fine = np.zeros((2 * n + 1,) * 3, dtype=bool)
    for a in range(3):
        for b in range(3):
            for c in range(3):
                fine[a : a + 2 * n : 2, b : b + 2 * n : 2, c : c + 2 * n : 2] |= cells
    return fine


def children_of(cells: np.ndarray) -> np.ndarray:
    return cells.repeat(2, 0).repeat(2, 1).repeat(2, 2)


# -- raw dump -----------------------------------------------------------------
# Little-endian: int32 level, int32 R_l, then (R_l+1)^3 float32 node values,
# x-fastest.

_HEADER = struct.Struct("<ii")


def dump_grid(grid: LevelGrid, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(grid.level, grid.cells))
        fh.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def load_grid_dump(path):
    """Returns ``(level, cells, values)`` from a raw dump."""
    data = Path(path).read_bytes()
    level, cells = _HEADER.unpack_from(data)
    n = cells + 1
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if values.size != n**3:
        raise ValueError(f"dump holds {values.size} values, expected {n**3}")
    return level, cells, values.reshape(n, n, n)
