import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from isofield.field import build_oracle, bundled_scene
from isofield.localize import AlgoConfig, extract
from isofield.mesh import marching_cubes
from isofield.sampling import (
    OhemState,
    bce_loss,
    cluster_decomposition,
    importance_sample_points,
    iou_from_points,
    ohem_item_weight,
    ohem_point_weight,
    ohem_update,
    project_to_surface,
    sample_batch,
    softz_decode,
    softz_encode,
)

depth = st.floats(-1.0, 1.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(depth, st.sampled_from([2, 3, 64, 128]))
def test_softz_against_case_by_case_reference(pz, n):
    np.testing.assert_allclose(softz_encode(pz, n), oracles.softz(pz, n), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(depth, st.sampled_from([2, 64, 128]))
def test_softz_decodes_to_input(pz, n):
    assert softz_decode(softz_encode(pz, n)) == pytest.approx(pz, abs=1e-12)


def test_softz_vectorized_shape():
    z = softz_encode(np.zeros((4, 5)), 8)
    assert z.shape == (4, 5, 8)
    with pytest.raises(ValueError):
        softz_encode(1.5)
    with pytest.raises(ValueError):
        softz_encode(0.0, 1)


def test_bce():
    assert bce_loss(0.5, 1) == pytest.approx(math.log(2))
    assert bce_loss(1.0, 1) == pytest.approx(-math.log(1 - 1e-7), abs=1e-12)
    assert bce_loss(0.0, 1) == pytest.approx(-math.log(1e-7))
    np.testing.assert_allclose(bce_loss([0.2, 0.8], [0, 1]), [-math.log(0.8)] * 2)


def test_point_iou():
    assert iou_from_points([0.9, 0.1, 0.6], [1, 0, 0]) == 0.5
    assert iou_from_points([0.1, 0.2], [0, 0]) == 1.0
    assert iou_from_points([0.5], [1]) == 1.0
    with pytest.raises(ValueError):
        iou_from_points([0.1], [0, 1])
    with pytest.raises(ValueError):
        iou_from_points([], [])


def test_ohem_weight_values():
    assert ohem_item_weight(1.0) == pytest.approx(math.exp(10 - 1 / 0.15), abs=1e-9)
    assert ohem_item_weight(0.0) == pytest.approx(math.exp(10))
    assert ohem_point_weight(0.0) == 1.0
    assert ohem_point_weight(1e6) == ohem_point_weight(20.0)
    assert np.all(np.diff(ohem_item_weight(np.linspace(0, 1, 11))) < 0)
    assert np.all(np.diff(ohem_point_weight(np.linspace(0, 5, 11))) > 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=20), st.floats(0.01, 100))
def test_normalization_invariance(ious, c):
    w = ohem_item_weight(np.array(ious))
    p = w / w.sum()
    q = (c * w) / (c * w).sum()
    np.testing.assert_allclose(p, q, rtol=1e-12)
    assert np.argmax(p) == np.argmax(q)


def test_cluster_decomposition_identity(rng):
    losses = rng.random(1000)
    clusters = rng.choice(["a", "b", "c"], size=1000, p=[0.7, 0.2, 0.1])
    g, w, probs = cluster_decomposition(losses, clusters)
    assert abs(g - w) <= 1e-12
    assert sum(probs.values()) == pytest.approx(1.0)


def test_state_lazy_init_and_overwrite():
    s = OhemState()
    for i in range(3):
        s.register(i, 4)
    # nothing seen: uniform
    np.testing.assert_allclose(s.item_distribution(), 1 / 3)
    s.update(0, 1.0, [0, 1], [0.0, 2.0])
    s.update(1, 0.0)
    # item 2 gets the weight of the mean seen IoU
    assert s.item_table()[2] == pytest.approx(ohem_item_weight(0.5))
    pt = s.point_table(0)
    assert pt[0] == 1.0 and pt[1] == pytest.approx(ohem_point_weight(2.0))
    assert pt[2] == pt[3] == pytest.approx(0.5 * (pt[0] + pt[1]))
    np.testing.assert_allclose(s.point_distribution(2), 0.25)
    s.update(0, 0.2)
    assert s.item_weights[0] == pytest.approx(ohem_item_weight(0.2))
    with pytest.raises(KeyError):
        s.update(9, 0.5)


def test_ema_blending():
    s = OhemState(ema=0.5)
    s.register("x", 2)
    s.update("x", 1.0)
    s.update("x", 0.0)
    assert s.item_weights["x"] == pytest.approx(0.5 * ohem_item_weight(1.0) + 0.5 * ohem_item_weight(0.0))


def test_ohem_update_batch():
    s = OhemState()
    s.register("a", 3)
    ohem_update(s, [("a", 0.4, np.array([2]), np.array([1.0]))])
    assert s.item_ious["a"] == 0.4
    assert s.point_weights["a"][2] == pytest.approx(ohem_point_weight(1.0))


def test_sampler_frequencies_match_weights():
    s = OhemState()
    ious = [0.1, 0.3, 0.5, 0.9]
    for i, iou in enumerate(ious):
        s.register(i, 3)
        s.update(i, iou, np.arange(3), np.array([0.1, 0.5, 1.0]))
    batch = sample_batch(s, 0, 100_000, 1)
    ids = np.array([b[0] for b in batch])
    freq = np.bincount(ids, minlength=4) / len(ids)
    np.testing.assert_allclose(freq, s.item_distribution(), atol=0.01)
    pts = np.concatenate([b[1] for b in batch])
    np.testing.assert_allclose(np.bincount(pts, minlength=3) / len(pts), s.point_distribution(0), atol=0.01)


def test_sampler_is_seeded():
    s = OhemState()
    for i in range(5):
        s.register(i, 10)
    a = sample_batch(s, 3, 8, 4)
    b = sample_batch(s, np.random.default_rng(3), 8, 4)
    assert [x[0] for x in a] == [x[0] for x in b]
    assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))
    with pytest.raises(ValueError):
        sample_batch(OhemState(), 0, 1, 1)


def test_projection_lands_on_surface(rng):
    oracle = build_oracle(bundled_scene("torus"))
    p, ok = project_to_surface(oracle, rng.uniform(-0.9, 0.9, (200, 3)))
    assert ok.mean() > 0.9
    np.testing.assert_allclose(oracle.occupancy_uncounted(p[ok]), 0.5, atol=1e-6)


@pytest.mark.parametrize("source", ["oracle", "mesh"])
def test_importance_sampling(source):
    oracle = build_oracle(bundled_scene("sphere"))
    if source == "mesh":
        grid = extract(oracle, AlgoConfig.for_resolution(32)).final_grid
        src = marching_cubes(grid)
        oracle.reset()
    else:
        src = oracle
    s = importance_sample_points(src, 1000, sigma=0.05, seed=1, oracle=oracle)
    assert s.positions.shape == (1000, 3)
    assert s.near_surface.sum() == 1000 - 62
    assert oracle.calls == 1000  # labels come from the counted oracle
    r = np.linalg.norm(s.positions[s.near_surface], axis=1)
    assert np.median(np.abs(r - 0.5)) < 0.06
    np.testing.assert_array_equal(s.labels, (np.linalg.norm(s.positions, axis=1) <= 0.5).astype(int))


def test_importance_sampling_errors():
    oracle = build_oracle(bundled_scene("sphere"))
    with pytest.raises(ValueError):
        importance_sample_points(oracle, 0)
    mesh = marching_cubes(extract(oracle, AlgoConfig.for_resolution(32)).final_grid)
    with pytest.raises(ValueError):
        importance_sample_points(mesh, 10)
