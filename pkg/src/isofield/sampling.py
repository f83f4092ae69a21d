"""Training-side sampling math: SoftZ depth, BCE, point IoU and OHEM.

Online hard example mining keeps an inverse sampling probability per item and
per point, refreshed every time they are visited:

    item:   exp(-IoU / alpha_i + beta_i)
    point:  1 / (exp(-BCE / alpha_p) + beta_p)

Normalizing the stored values gives the sampling distributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BCE_EPS = 1e-7
ALPHA_I, BETA_I = 0.15, 10.0
ALPHA_P, BETA_P = 0.7, 0.0
BCE_CAP = 20.0


# -- SoftZ ----------------------------------------------------------------------


def softz_encode(pz, n: int = 64) -> np.ndarray:
    """Soft one-hot encoding of depth(s) in [-1, 1] into ``n`` channels.

    Scalar input gives shape (n,); array input gives (..., n).
    """
    if n < 2:
        raise ValueError("SoftZ needs at least two channels")
    pz = np.asarray(pz, dtype=float)
    if not np.all((pz >= -1.0) & (pz <= 1.0)):
        raise ValueError("depth must lie in [-1, 1]")
    scaled = (n - 1) * 0.5 * (pz + 1.0)
    i0 = np.floor(scaled).astype(np.int64)
    frac = scaled - i0
    out = np.zeros(pz.shape + (n,))
    np.put_along_axis(out, i0[..., None], (1.0 - frac)[..., None], axis=-1)
    upper = i0 + 1
    has_upper = upper < n
    if np.any(has_upper):
        idx = np.where(has_upper, upper, i0)
        vals = np.where(has_upper, frac, 1.0 - frac)
        np.put_along_axis(out, idx[..., None], vals[..., None], axis=-1)
    return out


def softz_decode(z: np.ndarray) -> np.ndarray:
    """Expected bin position, mapped back to [-1, 1]."""
    z = np.asarray(z, dtype=float)
    n = z.shape[-1]
    p = (z * np.arange(n)).sum(-1) / (n - 1)
    return 2.0 * p - 1.0


# -- losses and accuracy -------------------------------------------------------------


def bce_loss(prediction, label, eps: float = BCE_EPS):
    p = np.clip(np.asarray(prediction, dtype=float), eps, 1.0 - eps)
    y = np.asarray(label, dtype=float)
    out = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def iou_from_points(predictions, labels, threshold: float = 0.5) -> float:
    pred = np.asarray(predictions, dtype=float)
    lab = np.asarray(labels)
    if pred.shape != lab.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {lab.shape}")
    if pred.size == 0:
        raise ValueError("no points")
    p = pred >= threshold
    y = lab.astype(bool)
    union = np.count_nonzero(p | y)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & y) / union


def ohem_item_weight(iou, alpha: float = ALPHA_I, beta: float = BETA_I):
    return np.exp(-np.asarray(iou, dtype=float) / alpha + beta)


def ohem_point_weight(bce, alpha: float = ALPHA_P, beta: float = BETA_P, cap: float = BCE_CAP):
    b = np.minimum(np.asarray(bce, dtype=float), cap)
    return 1.0 / (np.exp(-b / alpha) + beta)


def cluster_decomposition(losses, clusters):
    """Global mean loss and the same mean written as sum_i P_i * (cluster mean).

    Returns ``(global_mean, weighted_sum, probabilities)``.
    """
    losses = np.asarray(losses, dtype=float)
    clusters = np.asarray(clusters)
    names, inv = np.unique(clusters, return_inverse=True)
    counts = np.bincount(inv)
    probs = counts / len(losses)
    means = np.bincount(inv, weights=losses) / counts
    return float(losses.mean()), float((probs * means).sum()), dict(zip(names.tolist(), probs))


# -- OHEM state -------------------------------------------------------------------


@dataclass
class OhemState:
    """Stored inverse probabilities for items and their fixed point pools.

    Items/points never visited hold NaN and are given a neutral weight at
    normalization time: the item weight at the mean IoU seen so far, and the
    mean stored weight of the item's visited points. With ``ema`` set, new
    values are blended as ``ema * old + (1 - ema) * new`` instead of
    overwriting.
    """

    alpha_i: float = ALPHA_I
    beta_i: float = BETA_I
    alpha_p: float = ALPHA_P
    beta_p: float = BETA_P
    bce_cap: float = BCE_CAP
    ema: float | None = None
    item_ids: list = field(default_factory=list)
    item_weights: dict = field(default_factory=dict)
    item_ious: dict = field(default_factory=dict)
    point_weights: dict = field(default_factory=dict)

    def register(self, item_id, pool_size: int):
        if item_id not in self.item_weights:
            self.item_ids.append(item_id)
            self.item_weights[item_id] = math.nan
            self.point_weights[item_id] = np.full(pool_size, np.nan)

    def __len__(self):
        return len(self.item_ids)

    def _blend(self, old, new):
        if self.ema is None:
            return new
        return np.where(np.isnan(old), new, self.ema * old + (1.0 - self.ema) * new)

    def update(self, item_id, iou: float, point_ids=None, bce=None):
        if item_id not in self.item_weights:
            raise KeyError(f"unregistered item {item_id!r}")
        w = float(ohem_item_weight(iou, self.alpha_i, self.beta_i))
        self.item_weights[item_id] = float(self._blend(np.float64(self.item_weights[item_id]), w))
        self.item_ious[item_id] = float(iou)
        if point_ids is not None:
            point_ids = np.asarray(point_ids)
            pw = ohem_point_weight(bce, self.alpha_p, self.beta_p, self.bce_cap)
            table = self.point_weights[item_id]
            # repeated ids in one batch: the last occurrence wins
            table[point_ids] = self._blend(table[point_ids], pw)

    def neutral_item_weight(self) -> float:
        if not self.item_ious:
            return float(ohem_item_weight(0.5, self.alpha_i, self.beta_i))
        return float(ohem_item_weight(np.mean(list(self.item_ious.values())), self.alpha_i, self.beta_i))

    def item_table(self) -> np.ndarray:
        w = np.array([self.item_weights[i] for i in self.item_ids], dtype=float)
        w[np.isnan(w)] = self.neutral_item_weight()
        return w

    def item_distribution(self) -> np.ndarray:
        w = self.item_table()
        return w / w.sum()

    def point_table(self, item_id) -> np.ndarray:
        w = self.point_weights[item_id].copy()
        seen = ~np.isnan(w)
        w[~seen] = w[seen].mean() if seen.any() else 1.0
        return w

    def point_distribution(self, item_id) -> np.ndarray:
        w = self.point_table(item_id)
        return w / w.sum()


def ohem_update(state: OhemState, results) -> OhemState:
    """Apply ``(item_id, iou, point_ids, bce)`` tuples to the state (in place) and return it."""
    for item_id, iou, point_ids, bce in results:
        state.update(item_id, iou, point_ids, bce)
    return state


def sample_batch(state: OhemState, rng, batch_size: int, points_per_item: int):
    """Draw items proportional to item weights, then points proportional to point weights.

    ``rng`` is a seed or a ``numpy.random.Generator``. Returns a list of
    ``(item_id, point_ids)``.
    """
    if len(state) == 0:
        raise ValueError("OHEM state holds no items")
    rng = np.random.default_rng(rng)
    picks = rng.choice(len(state.item_ids), size=batch_size, p=state.item_distribution())
    batch = []
    for idx in picks:
        item_id = state.item_ids[idx]
        p = state.point_distribution(item_id)
        batch.append((item_id, rng.choice(len(p), size=points_per_item, p=p)))
    return batch


# -- importance sampling of 3D points ---------------------------------------------------


@dataclass
class SamplePoints:
    positions: np.ndarray  # (n, 3)
    labels: np.ndarray  # (n,) in {0, 1}
    near_surface: np.ndarray  # (n,) bool, False for the uniform share


def project_to_surface(oracle, pts: np.ndarray, iters: int = 60, tol: float = 1e-10):
    """Newton-style projection onto the zero level set of the oracle's signed distance.

    Returns the projected points and a mask of those that converged.
    """
    p = np.array(pts, dtype=float)
    h = 1e-6
    eye = np.eye(3) * h
    for _ in range(iters):
        d = oracle.signed_distance(p)
        if np.all(np.abs(d) < tol):
            break
        g = np.stack([(oracle.signed_distance(p + e) - oracle.signed_distance(p - e)) / (2 * h) for e in eye], axis=1)
        gn = np.einsum("ij,ij->i", g, g)
        step = np.where(gn > 0, d / np.maximum(gn, 1e-300), 0.0)
        p = p - step[:, None] * g
        p = np.clip(p, -1.0, 1.0)
    d = oracle.signed_distance(p)
    return p, np.abs(d) < 1e-9


def surface_points(oracle, n: int, rng) -> np.ndarray:
    """Points on the oracle's surface, from uniform seeds projected onto the level set."""
    out = []
    have = 0
    for _ in range(100):
        seeds = rng.uniform(-1.0, 1.0, size=(max(2 * (n - have), 64), 3))
        p, ok = project_to_surface(oracle, seeds)
        out.append(p[ok])
        have += int(ok.sum())
        if have >= n:
            break
    pts = np.concatenate(out)
    if len(pts) < n:
        raise RuntimeError("could not place enough points on the surface")
    return pts[:n]


def importance_sample_points(source, n: int, sigma: float = 0.05, uniform_fraction: float = 1.0 / 16, seed=0, oracle=None) -> SamplePoints:
    """Surface-concentrated training points plus a uniform share.

    ``source`` is a FieldOracle (surface found by projection) or a TriangleMesh
    (area-weighted samples); labels always come from ``oracle`` (defaults to
    ``source`` when it is an oracle) binarized at 0.5.
    """
    from .mesh import TriangleMesh, sample_surface

    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labeler = oracle if oracle is not None else source
    if isinstance(labeler, TriangleMesh):
        raise ValueError("labels need an occupancy oracle")
    n_uniform = math.floor(n * uniform_fraction)
    n_surface = n - n_uniform
    if n_surface:
        if isinstance(source, TriangleMesh):
            base = sample_surface(source, n_surface, seed=rng).points
        else:
            base = surface_points(source, n_surface, rng)
        near = base + rng.normal(0.0, sigma, size=base.shape) if sigma > 0 else base
    else:
        near = np.empty((0, 3))
    uniform = rng.uniform(-1.0, 1.0, size=(n_uniform, 3))
    pos = np.concatenate([near, uniform])
    labels = (labeler.occupancy(pos) >= 0.5).astype(np.int64)
    flags = np.r_[np.ones(len(near), dtype=bool), np.zeros(n_uniform, dtype=bool)]
    return SamplePoints(pos, labels, flags)
