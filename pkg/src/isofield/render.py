"""Mesh-free novel-view rendering of an occupancy field.

The field is resampled on a grid aligned with the target view: x/y follow the
pixel axes and the k index runs along the camera rays with k = 0 nearest.
The progressive localizer runs to level L-1; the binarized result is
upsampled to level L and an argmax along k finds the first occupied node per
pixel. Nodes behind that node are occluded ("shadow") and never evaluated.
Only the remaining uncertain nodes are evaluated, after which a second argmax
gives the bracketing pair of nodes whose occupancy values locate the surface.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field

import numpy as np

from .field import FieldOracle, NoTextureError, rotation_matrix
from .grid import EVALUATED, SHADOW, argmax_z, binarize_values, boundary_candidates, upsample_values
from .localize import AlgoConfig, _refined_grid, evaluate_nodes, progressive_to_level


@dataclass
class CameraSpec:
    """Rigid view transform plus optional weak-perspective scale.

    World to view: ``v = R @ p + translate``, then ``v.xy *= scale``, with
    ``R = Ry(yaw) @ Rx(pitch)``. ``scale == 1`` is plain orthographic.
    """

    yaw: float = 0.0
    pitch: float = 0.0
    scale: float = 1.0
    translate: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("camera scale must be positive")
        self.rotation = rotation_matrix((self.pitch, self.yaw, 0.0))
        self.translate = tuple(float(t) for t in self.translate)

    @classmethod
    def parse(cls, text: str) -> "CameraSpec":
        """Parse ``yaw,pitch[,dist]``; dist sets the weak-perspective scale to 1/dist."""
        parts = [float(p) for p in text.split(",")]
        if len(parts) not in (2, 3):
            raise ValueError(f"camera must be yaw,pitch[,dist], got {text!r}")
        dist = parts[2] if len(parts) == 3 else 1.0
        if dist <= 0:
            raise ValueError("camera distance must be positive")
        return cls(yaw=parts[0], pitch=parts[1], scale=1.0 / dist)

    @property
    def is_identity(self) -> bool:
        return np.array_equal(self.rotation, np.eye(3)) and self.scale == 1.0 and not any(self.translate)

    def view_to_world(self, pts: np.ndarray) -> np.ndarray:
        if self.is_identity:
            return pts
        v = np.array(pts, dtype=float)
        v[:, :2] /= self.scale
        v -= np.asarray(self.translate)
        return v @ self.rotation  # R^T applied to row vectors

    def world_to_view(self, pts: np.ndarray) -> np.ndarray:
        if self.is_identity:
            return pts
        v = np.asarray(pts, dtype=float) @ self.rotation.T + np.asarray(self.translate)
        v[:, :2] *= self.scale
        return v


class ViewField:
    """The scene's field expressed in view coordinates; counts on the wrapped oracle."""

    def __init__(self, oracle: FieldOracle, camera: CameraSpec):
        self.oracle = oracle
        self.camera = camera

    @property
    def calls(self) -> int:
        return self.oracle.calls

    @property
    def has_texture(self) -> bool:
        return self.oracle.has_texture

    def occupancy(self, points, workers: int = 1):
        return self.oracle.occupancy(self.camera.view_to_world(np.asarray(points, dtype=float)), workers=workers)

    def occupancy_uncounted(self, points):
        return self.oracle.occupancy_uncounted(self.camera.view_to_world(np.asarray(points, dtype=float)))

    def texture(self, points):
        return self.oracle.texture(self.camera.view_to_world(np.asarray(points, dtype=float)))


@dataclass
class RenderedImage:
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W), NaN where not covered
    mask: np.ndarray  # (H, W) bool
    background: tuple = (1.0, 1.0, 1.0)
    stats: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.mask.shape


def _to_image(a: np.ndarray) -> np.ndarray:
    # grid columns are [j, i] with j = 0 at y = -1; images put y = +1 on row 0
    return a[::-1]


def _localize_view(oracle: FieldOracle, camera: CameraSpec, cfg: AlgoConfig):
    if cfg.variant != "progressive":
        raise ValueError("mesh-free rendering runs on the progressive localizer")
    if cfg.levels < 1:
        raise ValueError("rendering needs at least one refinement level")
    view = ViewField(oracle, camera)
    calls0 = oracle.calls
    t0 = time.perf_counter()

    coarse, evals, _ = progressive_to_level(view, cfg, cfg.levels - 1)
    interp = upsample_values(binarize_values(coarse.values))
    fine = _refined_grid(coarse, interp)
    omax, imax = argmax_z(interp)

    n = fine.nodes
    k = np.arange(n)[:, None, None]
    shadow = ((omax == 1.0)[None] & (k > imax[None])) & ~fine.evaluated
    fine.states[shadow] = SHADOW
    todo = boundary_candidates(interp) & ~shadow & ~fine.evaluated
    final_evals = evaluate_nodes(view, fine, todo, cfg.workers)

    omax2, imax2 = argmax_z(binarize_values(fine.values))
    covered = omax2 == 1.0
    prev = np.maximum(imax2 - 1, 0)
    v_cur = np.take_along_axis(fine.values, imax2[None], 0)[0]
    v_prev = np.take_along_axis(fine.values, prev[None], 0)[0]
    at_front = covered & (imax2 == 0)
    denom = v_cur - v_prev
    degenerate = covered & ~at_front & (denom == 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(degenerate | at_front, 1.0, (0.5 - v_prev) / denom)
    frac = np.clip(frac, 0.0, 1.0)
    _, zs = fine.axis_coords()
    depth = zs[prev] + frac * (zs[imax2] - zs[prev])
    depth = np.where(covered, depth, np.nan)

    # uncovered columns still holding unevaluated fractional values (never expected: those
    # nodes are evaluated unless shadowed, and shadows only exist in covered columns)
    unresolved = (boundary_candidates(fine.values) & (fine.states != EVALUATED)).any(axis=0)
    stats = {
        "oracle_calls": oracle.calls - calls0,
        "coarse_evals": sum(evals),
        "final_level_evals": final_evals,
        "shadow_nodes": int(np.count_nonzero(shadow)),
        "degenerate_brackets": int(np.count_nonzero(degenerate)),
        "front_clipped": int(np.count_nonzero(at_front)),
        "grazing_pixels": int(np.count_nonzero(unresolved & ~covered)),
        "first_imax": imax,
        "first_omax": omax,
        "final_imax": imax2,
        "wall_ms": 1000.0 * (time.perf_counter() - t0),
    }
    return fine, depth, covered, stats


def surface_depth_map(oracle: FieldOracle, camera: CameraSpec, cfg: AlgoConfig):
    """Depth buffer and coverage mask in image layout (row 0 = top)."""
    _, depth, covered, stats = _localize_view(oracle, camera, cfg)
    return _to_image(depth), _to_image(covered), stats


def render_view(oracle: FieldOracle, camera: CameraSpec, cfg: AlgoConfig, background=(1.0, 1.0, 1.0)) -> RenderedImage:
    if not oracle.has_texture:
        raise NoTextureError("rendering needs a textured scene")
    fine, depth, covered, stats = _localize_view(oracle, camera, cfg)
    xs, _ = fine.axis_coords()
    n = fine.nodes
    rgb = np.empty((n, n, 3))
    rgb[:] = np.asarray(background, dtype=float)
    j, i = np.nonzero(covered)
    if len(j):
        pts = np.stack([xs[i], xs[j], depth[j, i]], axis=1)
        rgb[j, i] = np.clip(ViewField(oracle, camera).texture(pts), 0.0, 1.0)
    return RenderedImage(_to_image(rgb), _to_image(depth), _to_image(covered), tuple(background), stats)


def composite(image: RenderedImage, backdrop: np.ndarray) -> np.ndarray:
    backdrop = np.asarray(backdrop)
    if backdrop.shape != image.rgb.shape:
        raise ValueError(f"backdrop shape {backdrop.shape} != image shape {image.rgb.shape}")
    return np.where(image.mask[..., None], image.rgb, backdrop)


# -- reference path -------------------------------------------------------------


def raymarch_depth(oracle: FieldOracle, camera: CameraSpec, resolution: int, bisect_steps: int = 40):
    """Dense ray march (step 2/resolution) plus bisection; never touches the call counter.

    Returns depth and mask in image layout.
    """
    view = ViewField(oracle, camera)
    n = resolution + 1
    xs = -1.0 + 2.0 * np.arange(n) / resolution
    zs = 1.0 - 2.0 * np.arange(n) / resolution
    depth = np.full((n, n), np.nan)
    first = np.full((n, n), -1)
    # march plane by plane so memory stays O(n^2)
    X, Y = np.meshgrid(xs, xs)  # [j, i]
    xy = np.stack([X.ravel(), Y.ravel()], axis=1)
    for k in range(n):
        pending = first.ravel() < 0
        if not pending.any():
            break
        pts = np.column_stack([xy[pending], np.full(pending.sum(), zs[k])])
        hit = view.occupancy_uncounted(pts) >= 0.5
        idx = np.flatnonzero(pending)[hit]
        first.ravel()[idx] = k
    covered = first >= 0
    front = covered & (first == 0)
    depth[front] = 1.0
    j, i = np.nonzero(covered & ~front)
    if len(j):
        hi = zs[first[j, i] - 1]  # outside
        lo = zs[first[j, i]]  # inside
        base = np.stack([xs[i], xs[j]], axis=1)
        for _ in range(bisect_steps):
            mid = 0.5 * (hi + lo)
            inside = view.occupancy_uncounted(np.column_stack([base, mid])) >= 0.5
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        depth[j, i] = 0.5 * (hi + lo)
    return _to_image(depth), _to_image(covered)


def render_reference(oracle: FieldOracle, camera: CameraSpec, resolution: int, background=(1.0, 1.0, 1.0)) -> RenderedImage:
    """Image from the ray-march reference depth; used to produce golden images."""
    depth, mask = raymarch_depth(oracle, camera, resolution)
    n = resolution + 1
    xs = -1.0 + 2.0 * np.arange(n) / resolution
    ys = xs[::-1]
    rgb = np.empty((n, n, 3))
    rgb[:] = np.asarray(background, dtype=float)
    r, c = np.nonzero(mask)
    if len(r):
        pts = np.stack([xs[c], ys[r], depth[r, c]], axis=1)
        rgb[r, c] = np.clip(ViewField(oracle, camera).texture(pts), 0.0, 1.0)
    return RenderedImage(rgb, depth, mask, tuple(background))


# -- PPM --------------------------------------------------------------------------


def to_bytes(rgb: np.ndarray) -> np.ndarray:
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary P6, 8 bits per channel, row 0 at the top."""
    data = to_bytes(rgb) if rgb.dtype != np.uint8 else rgb
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_ppm(path) -> np.ndarray:
    raw = open(path, "rb").read()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError("only 8-bit PPM supported")
    return np.frombuffer(raw, dtype=np.uint8, offset=m.end(), count=w * h * 3).reshape(h, w, 3)
