"""Desk-scale demonstration of OHEM on a clustered 2D occupancy dataset.

Each training item is a 2D shape (a disc or a thin cross) on [-1, 1]^2 with a
fixed pool of labelled points. A small MLP predicts occupancy from the query
position plus two pixel-aligned features: the item's silhouette raster blurred
at a fine and a coarse scale, bilinearly sampled at the query position. Disc
boundaries sit where the fine blur crosses 0.5; the arms of thin crosses are
narrower than the fine blur, so their boundary sits at a lower value that
depends on the coarse blur. Crosses are thus a minority with their own rule.
The cluster of each item is kept only for reporting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .sampling import OhemState, bce_loss, iou_from_points, sample_batch

RASTER = 64
BLUR_SCALES = (0.1, 0.3)  # NDC units
EVAL_RES = 48


# -- shapes -------------------------------------------------------------------------


def sd_disc(p, center, radius):
    return np.linalg.norm(p - center, axis=-1) - radius


def sd_rect(p, half):
    q = np.abs(p) - half
    return np.linalg.norm(np.maximum(q, 0.0), axis=-1) + np.minimum(q.max(-1), 0.0)


def sd_cross(p, center, arm, width, angle):
    c, s = np.cos(angle), np.sin(angle)
    local = (p - center) @ np.array([[c, -s], [s, c]])
    return np.minimum(sd_rect(local, np.array([arm, width])), sd_rect(local, np.array([width, arm])))


@dataclass
class Shape2D:
    kind: str
    params: dict

    def sdf(self, p):
        if self.kind == "disc":
            return sd_disc(p, np.asarray(self.params["center"]), self.params["radius"])
        if self.kind == "cross":
            return sd_cross(p, np.asarray(self.params["center"]), self.params["arm"], self.params["width"], self.params["angle"])
        raise ValueError(f"unknown 2D shape {self.kind!r}")

    def inside(self, p):
        return self.sdf(p) <= 0.0


def random_shape(kind: str, rng) -> Shape2D:
    if kind == "disc":
        return Shape2D("disc", {"center": rng.uniform(-0.3, 0.3, 2), "radius": rng.uniform(0.3, 0.6)})
    if kind == "cross":
        return Shape2D(
            "cross",
            {"center": rng.uniform(-0.05, 0.05, 2), "arm": rng.uniform(0.6, 0.7), "width": rng.uniform(0.08, 0.11), "angle": rng.uniform(-0.1, 0.1)},
        )
    raise ValueError(f"unknown 2D shape {kind!r}")


# -- dataset ------------------------------------------------------------------------


@dataclass
class TrainingItem:
    item_id: int
    cluster: str
    shape: Shape2D
    points: np.ndarray  # (pool, 2)
    labels: np.ndarray  # (pool,)
    features: np.ndarray  # (pool, n_features) model inputs for the pool
    eval_features: np.ndarray  # (EVAL_RES^2, n_features)
    eval_labels: np.ndarray
    latest_iou: float = float("nan")


@dataclass
class DatasetSpec:
    clusters: dict  # name -> (shape kind, fraction)
    n_items: int = 200
    pool_size: int = 1024
    sigma: float = 0.05
    uniform_fraction: float = 1.0 / 16

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetSpec":
        clusters = {c["name"]: (c["shape"], float(c["fraction"])) for c in doc["clusters"]}
        total = sum(f for _, f in clusters.values())
        if not clusters or abs(total - 1.0) > 1e-9:
            raise ValueError("cluster fractions must sum to 1")
        keys = ("n_items", "pool_size", "sigma", "uniform_fraction")
        return cls(clusters=clusters, **{k: doc[k] for k in keys if k in doc})

    @classmethod
    def load(cls, path) -> "DatasetSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


DATASET_DIR = Path(__file__).with_name("datasets")
BUNDLED_DATASETS = ("toy_imbalanced", "toy_balanced")


def bundled_dataset(name: str) -> DatasetSpec:
    if name not in BUNDLED_DATASETS:
        raise KeyError(f"unknown bundled dataset {name!r}")
    return DatasetSpec.load(DATASET_DIR / f"{name}.json")


def _feature_maps(shape: Shape2D) -> list[np.ndarray]:
    t = -1.0 + (np.arange(RASTER) + 0.5) * 2.0 / RASTER
    X, Y = np.meshgrid(t, t, indexing="ij")
    occ = shape.inside(np.stack([X.ravel(), Y.ravel()], 1)).reshape(RASTER, RASTER).astype(float)
    px = RASTER / 2.0
    return [ndimage.gaussian_filter(occ, s * px, mode="constant") for s in BLUR_SCALES]


def pixel_aligned_features(maps: list[np.ndarray], pts: np.ndarray) -> np.ndarray:
    """Position plus each feature map bilinearly sampled at the position."""
    coords = ((pts + 1.0) * RASTER / 2.0 - 0.5).T
    cols = [ndimage.map_coordinates(m, coords, order=1, mode="nearest") for m in maps]
    return np.column_stack([pts] + cols)


def _point_pool(shape: Shape2D, size: int, sigma: float, uniform_fraction: float, rng) -> np.ndarray:
    n_uniform = int(np.floor(size * uniform_fraction))
    want = size - n_uniform
    near = []
    while sum(len(a) for a in near) < want:
        cand = rng.uniform(-1.0, 1.0, size=(8 * want, 2))
        d = shape.sdf(cand)
        keep = rng.random(len(cand)) < np.exp(-0.5 * (d / sigma) ** 2)
        near.append(cand[keep])
    near = np.concatenate(near)[:want]
    return np.concatenate([near, rng.uniform(-1.0, 1.0, size=(n_uniform, 2))])


def make_dataset(spec: DatasetSpec, seed) -> list[TrainingItem]:
    rng = np.random.default_rng(seed)
    names = list(spec.clusters)
    counts = [int(round(spec.clusters[c][1] * spec.n_items)) for c in names]
    counts[0] += spec.n_items - sum(counts)
    items = []
    for name, count in zip(names, counts):
        for _ in range(count):
            shape = random_shape(spec.clusters[name][0], rng)
            pts = _point_pool(shape, spec.pool_size, spec.sigma, spec.uniform_fraction, rng)
            maps = _feature_maps(shape)
            grid = eval_grid()
            items.append(
                TrainingItem(
                    len(items),
                    name,
                    shape,
                    pts,
                    shape.inside(pts).astype(np.int64),
                    pixel_aligned_features(maps, pts),
                    pixel_aligned_features(maps, grid),
                    shape.inside(grid),
                )
            )
    return items


# -- model --------------------------------------------------------------------------


class MLP:
    """Two hidden ReLU layers, sigmoid output, trained with plain SGD on BCE."""

    def __init__(self, n_in: int, width: int = 32, seed=0):
        rng = np.random.default_rng(seed)
        dims = [n_in, width, width, 1]
        self.W = [rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)) for a, b in zip(dims[:-1], dims[1:])]
        self.b = [np.zeros(b) for b in dims[1:]]

    def logits(self, x):
        h = x
        acts = [h]
        for W, b in zip(self.W[:-1], self.b[:-1]):
            h = np.maximum(h @ W + b, 0.0)
            acts.append(h)
        return (h @ self.W[-1] + self.b[-1])[:, 0], acts

    def predict(self, x):
        z, _ = self.logits(x)
        return 1.0 / (1.0 + np.exp(-z))

    def sgd_step(self, x, y, lr: float):
        """One step on mean BCE; returns per-sample predictions."""
        z, acts = self.logits(x)
        p = 1.0 / (1.0 + np.exp(-z))
        g = ((p - y) / len(y))[:, None]
        for layer in range(len(self.W) - 1, -1, -1):
            gW = acts[layer].T @ g
            gb = g.sum(0)
            if layer:
                g = (g @ self.W[layer].T) * (acts[layer] > 0)
            self.W[layer] -= lr * gW
            self.b[layer] -= lr * gb
        return p


def eval_grid():
    t = -1.0 + (np.arange(EVAL_RES) + 0.5) * 2.0 / EVAL_RES
    X, Y = np.meshgrid(t, t, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], 1)


def evaluate_items(model: MLP, items: list[TrainingItem]) -> dict:
    """Dense-grid IoU per item, averaged per cluster."""
    per_cluster: dict = {}
    for item in items:
        iou = iou_from_points(model.predict(item.eval_features), item.eval_labels)
        per_cluster.setdefault(item.cluster, []).append(iou)
    return {c: float(np.mean(v)) for c, v in per_cluster.items()}


@dataclass
class ToyReport:
    method: str
    seed: int
    history: list = field(default_factory=list)  # (epoch, {cluster: iou})

    @property
    def final(self) -> dict:
        return self.history[-1][1]

    @property
    def worst(self) -> float:
        return min(self.final.values())

    def rows(self):
        for epoch, clusters in self.history:
            for name, iou in clusters.items():
                yield {"seed": self.seed, "cluster": name, "method": self.method, "iou": iou, "epoch": epoch}
            yield {"seed": self.seed, "cluster": "worst", "method": self.method, "iou": min(clusters.values()), "epoch": epoch}


def fit_toy_predictor(
    items: list[TrainingItem],
    use_ohem: bool,
    epochs: int = 40,
    seed: int = 0,
    lr: float = 0.05,
    width: int = 32,
    batch_items: int = 8,
    points_per_item: int = 128,
    eval_every: int = 0,
) -> ToyReport:
    if not items:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    model = MLP(items[0].features.shape[1], width, seed=rng)
    by_id = {it.item_id: it for it in items}
    state = OhemState()
    for it in items:
        state.register(it.item_id, len(it.points))
    steps = max(1, len(items) // batch_items)
    report = ToyReport("ohem" if use_ohem else "uniform", seed)
    report.history.append((0, evaluate_items(model, items)))
    for epoch in range(1, epochs + 1):
        for _ in range(steps):
            if use_ohem:
                batch = sample_batch(state, rng, batch_items, points_per_item)
            else:
                picks = rng.integers(len(items), size=batch_items)
                batch = [(items[i].item_id, rng.integers(len(items[i].points), size=points_per_item)) for i in picks]
            x = np.vstack([by_id[i].features[pids] for i, pids in batch])
            y = np.concatenate([by_id[i].labels[pids] for i, pids in batch]).astype(float)
            p = model.sgd_step(x, y, lr)
            if use_ohem:
                for n, (i, pids) in enumerate(batch):
                    sl = slice(n * points_per_item, (n + 1) * points_per_item)
                    iou = iou_from_points(p[sl], y[sl])
                    by_id[i].latest_iou = iou
                    state.update(i, iou, pids, bce_loss(p[sl], y[sl]))
        if epoch == epochs or (eval_every and epoch % eval_every == 0):
            report.history.append((epoch, evaluate_items(model, items)))
    return report


def paired_runs(items, epochs: int, seeds, **kw):
    """Uniform and OHEM training for each seed; returns a list of (uniform, ohem) reports."""
    return [(fit_toy_predictor(items, False, epochs, s, **kw), fit_toy_predictor(items, True, epochs, s, **kw)) for s in seeds]
