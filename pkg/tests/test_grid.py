import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from isofield.grid import (
    EVALUATED,
    INTERPOLATED,
    LevelGrid,
    argmax_z,
    binarize_values,
    boundary_candidates,
    cell_corner_range,
    cells_to_fine_nodes,
    children_of,
    dilate_1ring,
    dump_grid,
    load_grid_dump,
    upsample_interpolate,
    upsample_values,
)

small_cube = st.integers(2, 6).flatmap(lambda n: hnp.arrays(np.float64, (n, n, n), elements=st.floats(0, 1)))
small_mask = st.integers(1, 7).flatmap(lambda n: hnp.arrays(bool, (n, n, n)))


def test_node_coordinates():
    g = LevelGrid.empty(1, 2)
    assert g.cells == 4 and g.nodes == 5 and g.cell_size == 0.5
    pts = g.node_points()
    assert pts.shape == (125, 3)
    # x fastest, k = 0 is z = +1
    np.testing.assert_allclose(pts[0], [-1, -1, 1])
    np.testing.assert_allclose(pts[1], [-0.5, -1, 1])
    np.testing.assert_allclose(pts[5], [-1, -0.5, 1])
    np.testing.assert_allclose(pts[25], [-1, -1, 0.5])
    np.testing.assert_allclose(pts[-1], [1, 1, -1])


def test_shape_validation():
    with pytest.raises(ValueError):
        LevelGrid(0, 4, np.zeros((4, 4, 4)), np.zeros((4, 4, 4), dtype=np.uint8))


@settings(max_examples=40, deadline=None)
@given(small_cube)
def test_upsample_matches_trilinear_interpolant(v):
    up = upsample_values(v)
    np.testing.assert_allclose(up, oracles.trilinear_upsample(v), atol=1e-12)
    assert np.array_equal(up[0::2, 0::2, 0::2], v)


def test_upsample_interpolate_states():
    g = LevelGrid.empty(0, 2)
    g.states[:] = EVALUATED
    fine = upsample_interpolate(g)
    assert fine.level == 1
    assert np.all(fine.states[0::2, 0::2, 0::2] == EVALUATED)
    assert np.count_nonzero(fine.states == INTERPOLATED) == 5**3 - 3**3
    with pytest.raises(ValueError):
        upsample_interpolate(LevelGrid.empty(0, 2))


def test_binarize_is_inclusive_at_half():
    assert binarize_values(np.array([0.4999999, 0.5, 0.7])).tolist() == [0.0, 1.0, 1.0]


def test_boundary_candidates_are_strictly_fractional():
    v = np.array([0.0, 1e-12, 0.5, 1 - 1e-12, 1.0])
    assert boundary_candidates(v).tolist() == [False, True, True, True, False]


@settings(max_examples=60, deadline=None)
@given(small_mask)
def test_dilation_matches_shift_union(mask):
    assert np.array_equal(dilate_1ring(mask), oracles.dilate_26(mask))


def test_dilation_of_single_node_is_3x3x3():
    m = np.zeros((9, 9, 9), bool)
    m[4, 4, 4] = True
    assert dilate_1ring(m).sum() == 27
    m[:] = False
    m[0, 0, 0] = True
    assert dilate_1ring(m).sum() == 8


def test_argmax_first_index_on_ties():
    v = np.zeros((5, 2, 2))
    v[2, 0, 0] = v[4, 0, 0] = 1.0
    v[1, 1, 1] = 0.3
    vmax, idx = argmax_z(v)
    assert idx[0, 0] == 2 and vmax[0, 0] == 1.0
    assert idx[1, 1] == 1
    assert idx[0, 1] == 0 and vmax[0, 1] == 0.0


@settings(max_examples=30, deadline=None)
@given(small_cube)
def test_cell_corner_range_by_loops(v):
    lo, hi = cell_corner_range(v)
    n = v.shape[0] - 1
    for k in range(n):
        for j in range(n):
            for i in range(n):
                block = v[k : k + 2, j : j + 2, i : i + 2]
                assert lo[k, j, i] == block.min() and hi[k, j, i] == block.max()


def test_cells_to_fine_nodes_and_children():
    cells = np.zeros((3, 3, 3), bool)
    cells[1, 1, 1] = True
    nodes = cells_to_fine_nodes(cells)
    assert nodes.shape == (7, 7, 7)
    assert nodes.sum() == 27 and nodes[2:5, 2:5, 2:5].all()
    ch = children_of(cells)
    assert ch.shape == (6, 6, 6) and ch.sum() == 8 and ch[2:4, 2:4, 2:4].all()


def test_dump_roundtrip(tmp_path):
    g = LevelGrid.empty(1, 2)
    g.values[:] = np.random.default_rng(0).random(g.values.shape)
    dump_grid(g, tmp_path / "g.bin")
    level, cells, values = load_grid_dump(tmp_path / "g.bin")
    assert (level, cells) == (1, 4)
    np.testing.assert_allclose(values, g.values.astype(np.float32))
    raw = (tmp_path / "g.bin").read_bytes()
    assert len(raw) == 8 + 4 * 125
    assert raw[:8] == b"\x01\x00\x00\x00\x04\x00\x00\x00"
