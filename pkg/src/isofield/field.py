"""Analytic occupancy and texture fields built from CSG-combined primitives.

A scene is a set of signed-distance primitives combined by a CSG tree. The
occupancy of a point is a sigmoid of its signed distance,

    O(P) = 1 / (1 + exp(d(P) / tau)),

so the 0.5-level set is the surface and ``tau`` controls how wide the soft
transition band is. Every occupancy query goes through a counter so that
extraction algorithms can be compared by the number of evaluations they make.
"""

from __future__ import annotations

import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

DEFAULT_SHARPNESS = 2.0 / 256
SHAPE_KINDS = ("sphere", "box", "capsule", "torus")
CSG_OPS = ("union", "intersection", "difference")
CHUNK = 1 << 20


class SceneError(ValueError):
    """Raised for malformed scene descriptions."""


class NoTextureError(RuntimeError):
    """Raised when colors are requested from a texture-free scene."""


def rotation_matrix(rotate_deg) -> np.ndarray:
    """Rotation about x, then y, then z (angles in degrees)."""
    rx, ry, rz = (math.radians(a % 360.0) for a in rotate_deg)
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


# ---------------------------------------------------------------------------
# signed distance of primitives in their local frame


def sd_sphere(p, radius):
    return np.linalg.norm(p, axis=-1) - radius


def sd_box(p, half):
    q = np.abs(p) - np.asarray(half)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def sd_capsule(p, a, b, radius):
    a = np.asarray(a, dtype=float)
    ba = np.asarray(b, dtype=float) - a
    pa = p - a
    denom = float(ba @ ba)
    if denom == 0.0:
        return np.linalg.norm(pa, axis=-1) - radius
    h = np.clip(pa @ ba / denom, 0.0, 1.0)
    return np.linalg.norm(pa - h[:, None] * ba, axis=-1) - radius


def sd_torus(p, major, minor):
    # ring lies in the local xy-plane, symmetry axis is local z
    q = np.hypot(p[:, 0], p[:, 1]) - major
    return np.hypot(q, p[:, 2]) - minor


@dataclass
class Primitive:
    name: str
    kind: str
    params: dict
    translate: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotate: tuple = (0.0, 0.0, 0.0)
    color: tuple | None = None

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise SceneError(f"unknown primitive kind {self.kind!r}")
        self.translate = np.asarray(self.translate, dtype=float).reshape(3)
        self.rotate = tuple(float(a) for a in self.rotate)
        self._rot = rotation_matrix(self.rotate)
        self._identity = not any(a % 360.0 for a in self.rotate)
        try:
            self._check_params()
        except (KeyError, TypeError) as exc:
            raise SceneError(f"primitive {self.name!r}: bad parameters ({exc})") from exc

    def _check_params(self):
        p = self.params
        if self.kind == "sphere":
            ok = p["radius"] > 0
        elif self.kind == "box":
            ok = len(p["half_extents"]) == 3 and min(p["half_extents"]) > 0
        elif self.kind == "capsule":
            ok = len(p["a"]) == 3 and len(p["b"]) == 3 and p["radius"] > 0
        else:
            ok = p["major_radius"] > 0 and p["minor_radius"] > 0
        if not ok:
            raise SceneError(f"primitive {self.name!r}: nonpositive size")

    def local_bounds(self):
        p = self.params
        if self.kind == "sphere":
            r = p["radius"]
            return -np.full(3, r), np.full(3, r)
        if self.kind == "box":
            h = np.asarray(p["half_extents"], dtype=float)
            return -h, h
        if self.kind == "capsule":
            ends = np.array([p["a"], p["b"]], dtype=float)
            return ends.min(0) - p["radius"], ends.max(0) + p["radius"]
        big = p["major_radius"] + p["minor_radius"]
        lo = np.array([-big, -big, -p["minor_radius"]])
        return lo, -lo

    def world_bounds(self):
        lo, hi = self.local_bounds()
        corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        world = corners @ self._rot.T + self.translate
        return world.min(0), world.max(0)

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        local = pts - self.translate
        if not self._identity:
            local = local @ self._rot  # R^T applied to row vectors
        p = self.params
        if self.kind == "sphere":
            return sd_sphere(local, p["radius"])
        if self.kind == "box":
            return sd_box(local, p["half_extents"])
        if self.kind == "capsule":
            return sd_capsule(local, p["a"], p["b"], p["radius"])
        return sd_torus(local, p["major_radius"], p["minor_radius"])


@dataclass
class Texture:
    """Procedural color rule, defined everywhere in space."""

    kind: str
    color: tuple = (1.0, 1.0, 1.0)
    axis: int = 2
    low: tuple = (0.0, 0.0, 0.0)
    high: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("constant", "gradient", "per_primitive"):
            raise SceneError(f"unknown texture kind {self.kind!r}")
        for c in (self.color, self.low, self.high):
            if len(c) != 3 or not all(0.0 <= v <= 1.0 for v in c):
                raise SceneError("texture colors must be RGB triples in [0, 1]")


@dataclass
class SceneSpec:
    primitives: list[Primitive]
    csg: object = None
    sharpness: float = DEFAULT_SHARPNESS
    texture: Texture | None = None
    name: str = "scene"

    def __post_init__(self):
        if not (self.sharpness > 0 and math.isfinite(self.sharpness)):
            raise SceneError("sharpness must be positive")
        names = [p.name for p in self.primitives]
        if len(set(names)) != len(names):
            raise SceneError("duplicate primitive names")
        for prim in self.primitives:
            lo, hi = prim.world_bounds()
            if lo.min() < -1.0 - 1e-9 or hi.max() > 1.0 + 1e-9:
                raise SceneError(f"primitive {prim.name!r} does not fit inside [-1, 1]^3")
        if self.csg is not None:
            _check_csg(self.csg, set(names))
        if self.texture is not None and self.texture.kind == "per_primitive":
            if any(p.color is None for p in self.primitives):
                raise SceneError("per_primitive texture needs a color on every primitive")


def _check_csg(node, names):
    if isinstance(node, str):
        if node not in names:
            raise SceneError(f"CSG tree references undeclared primitive {node!r}")
        return
    if not isinstance(node, dict) or node.get("op") not in CSG_OPS:
        raise SceneError(f"bad CSG node {node!r}")
    children = node.get("children")
    if not isinstance(children, list) or not children:
        raise SceneError("CSG operation without children")
    if node["op"] == "difference" and len(children) < 2:
        raise SceneError("difference needs at least two operands")
    for c in children:
        _check_csg(c, names)


def scene_from_dict(doc: dict) -> SceneSpec:
    try:
        prims = []
        for p in doc.get("primitives", []):
            params = {k: v for k, v in p.items() if k not in ("name", "kind", "translate", "rotate", "color")}
            prims.append(
                Primitive(
                    name=p["name"],
                    kind=p["kind"],
                    params=params,
                    translate=p.get("translate", (0.0, 0.0, 0.0)),
                    rotate=p.get("rotate", (0.0, 0.0, 0.0)),
                    color=tuple(p["color"]) if "color" in p else None,
                )
            )
        tex = doc.get("texture")
        texture = None
        if tex is not None:
            axis = tex.get("axis", "z")
            texture = Texture(
                kind=tex["kind"],
                color=tuple(tex.get("color", (1.0, 1.0, 1.0))),
                axis="xyz".index(axis) if isinstance(axis, str) else int(axis),
                low=tuple(tex.get("low", (0.0, 0.0, 0.0))),
                high=tuple(tex.get("high", (1.0, 1.0, 1.0))),
            )
        return SceneSpec(
            primitives=prims,
            csg=doc.get("csg"),
            sharpness=float(doc.get("sharpness", DEFAULT_SHARPNESS)),
            texture=texture,
            name=doc.get("name", "scene"),
        )
    except (KeyError, TypeError) as exc:
        raise SceneError(f"malformed scene document: {exc}") from exc


def load_scene(path) -> SceneSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: invalid JSON ({exc})") from exc
    spec = scene_from_dict(doc)
    if "name" not in doc:
        spec.name = path.stem
    return spec


class CallCounter:
    """Thread-safe evaluation counter."""

    def __init__(self):
        self._n = 0
        self._lock = threading.Lock()

    def add(self, n: int):
        with self._lock:
            self._n += n

    @property
    def value(self) -> int:
        return self._n

    def reset(self):
        with self._lock:
            self._n = 0


class FieldOracle:
    """Occupancy/texture oracle over NDC points with an exact call counter.

    ``occupancy`` is the only counted entry point. ``signed_distance`` and
    ``occupancy_uncounted`` exist for reference paths (analytic checks,
    ray-march oracles) that must not perturb the accounting.
    """

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self.sharpness = spec.sharpness
        self.counter = CallCounter()
        self._by_name = {p.name: p for p in spec.primitives}

    @property
    def calls(self) -> int:
        return self.counter.value

    def reset(self):
        self.counter.reset()

    @property
    def has_texture(self) -> bool:
        return self.spec.texture is not None

    # -- geometry --------------------------------------------------------

    def _sd_node(self, node, pts):
        if isinstance(node, str):
            return self._by_name[node].signed_distance(pts)
        ds = [self._sd_node(c, pts) for c in node["children"]]
        if node["op"] == "union":
            return np.minimum.reduce(ds)
        if node["op"] == "intersection":
            return np.maximum.reduce(ds)
        rest = np.minimum.reduce(ds[1:])
        return np.maximum(ds[0], -rest)

    def signed_distance(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if not self.spec.primitives:
            return np.full(len(pts), np.inf)
        if self.spec.csg is None:
            return np.minimum.reduce([p.signed_distance(pts) for p in self.spec.primitives])
        return self._sd_node(self.spec.csg, pts)

    def occupancy_uncounted(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        out = np.empty(len(pts))
        for s in range(0, len(pts), CHUNK):
            out[s : s + CHUNK] = expit(-self.signed_distance(pts[s : s + CHUNK]) / self.sharpness)
        return out

    def occupancy(self, points, workers: int = 1) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        n = len(pts)
        if n == 0:
            return np.empty(0)
        if workers <= 1 or n < 2 * 4096:
            out = self.occupancy_uncounted(pts)
            self.counter.add(n)
            return out
        out = np.empty(n)
        bounds = np.linspace(0, n, workers + 1).astype(int)

        def job(i):
            lo, hi = bounds[i], bounds[i + 1]
            out[lo:hi] = self.occupancy_uncounted(pts[lo:hi])
            self.counter.add(hi - lo)

        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(job, range(workers)))
        return out

    # -- appearance ------------------------------------------------------

    def texture(self, points) -> np.ndarray:
        tex = self.spec.texture
        if tex is None:
            raise NoTextureError(f"scene {self.spec.name!r} has no texture")
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if tex.kind == "constant":
            return np.tile(np.asarray(tex.color, dtype=float), (len(pts), 1))
        if tex.kind == "gradient":
            t = np.clip(0.5 * (pts[:, tex.axis] + 1.0), 0.0, 1.0)[:, None]
            low, high = np.asarray(tex.low, dtype=float), np.asarray(tex.high, dtype=float)
            return low + t * (high - low)
        # per_primitive: color of the primitive whose surface is closest
        prims = self.spec.primitives
        d = np.stack([p.signed_distance(pts) for p in prims])
        colors = np.asarray([p.color for p in prims], dtype=float)
        return colors[np.argmin(d, axis=0)]


def build_oracle(spec: SceneSpec | dict) -> FieldOracle:
    if isinstance(spec, dict):
        spec = scene_from_dict(spec)
    return FieldOracle(spec)


def eval_occupancy_batch(oracle: FieldOracle, points, workers: int = 1) -> np.ndarray:
    return oracle.occupancy(points, workers=workers)


def eval_texture_batch(oracle: FieldOracle, points) -> np.ndarray:
    return oracle.texture(points)


BUNDLED_SCENES = Path(__file__).parent / "scenes"


def bundled_scene(name: str) -> SceneSpec:
    return load_scene(BUNDLED_SCENES / f"{name}.json")
