import numpy as np
import pytest

from isofield.ohem_toy import (
    BUNDLED_DATASETS,
    DatasetSpec,
    Shape2D,
    bundled_dataset,
    fit_toy_predictor,
    make_dataset,
    pixel_aligned_features,
)


def test_bundled_specs():
    imb = bundled_dataset("toy_imbalanced")
    assert imb.clusters == {"disc": ("disc", 0.95), "cross": ("cross", 0.05)}
    assert set(bundled_dataset("toy_balanced").clusters) == {"disc"}
    assert set(BUNDLED_DATASETS) == {"toy_imbalanced", "toy_balanced"}
    with pytest.raises(KeyError):
        bundled_dataset("nope")


def test_spec_validation():
    with pytest.raises(ValueError):
        DatasetSpec.from_dict({"clusters": [{"name": "a", "shape": "disc", "fraction": 0.5}]})
    spec = DatasetSpec.from_dict({"clusters": [{"name": "a", "shape": "disc", "fraction": 1.0}], "n_items": 3})
    assert spec.n_items == 3


def test_dataset_composition_and_determinism():
    spec = DatasetSpec(clusters={"disc": ("disc", 0.95), "cross": ("cross", 0.05)}, n_items=40, pool_size=64)
    a = make_dataset(spec, 5)
    b = make_dataset(spec, 5)
    assert [it.cluster for it in a].count("cross") == 2
    assert all(np.array_equal(x.points, y.points) for x, y in zip(a, b))
    for it in a:
        assert it.points.shape == (64, 2) and it.features.shape == (64, 4)
        np.testing.assert_array_equal(it.labels, it.shape.inside(it.points))


def test_features_start_with_position():
    disc = Shape2D("disc", {"center": np.zeros(2), "radius": 0.5})
    pts = np.array([[0.0, 0.0], [0.9, 0.9]])
    from isofield.ohem_toy import _feature_maps

    f = pixel_aligned_features(_feature_maps(disc), pts)
    np.testing.assert_array_equal(f[:, :2], pts)
    assert f[0, 2] > 0.9 and f[1, 2] < 0.05


def test_unknown_shape():
    with pytest.raises(ValueError):
        Shape2D("star", {}).sdf(np.zeros((1, 2)))


def test_zero_epochs_reports_untrained_baseline():
    items = make_dataset(DatasetSpec(clusters={"disc": ("disc", 1.0)}, n_items=8, pool_size=64), 0)
    rep = fit_toy_predictor(items, True, epochs=0, seed=0)
    assert [e for e, _ in rep.history] == [0]
    rows = list(rep.rows())
    assert {r["cluster"] for r in rows} == {"disc", "worst"}
    with pytest.raises(ValueError):
        fit_toy_predictor([], False, 1)


def test_training_is_deterministic():
    items = make_dataset(DatasetSpec(clusters={"disc": ("disc", 1.0)}, n_items=10, pool_size=128), 0)
    a = fit_toy_predictor(items, True, epochs=3, seed=2)
    b = fit_toy_predictor(items, True, epochs=3, seed=2)
    assert a.final == b.final


def test_balanced_data_gives_matching_results():
    items = make_dataset(bundled_dataset("toy_balanced"), 0)
    u = fit_toy_predictor(items, False, epochs=40, seed=0)
    o = fit_toy_predictor(items, True, epochs=40, seed=0)
    assert u.worst > 0.9
    assert abs(o.worst - u.worst) <= 0.05
