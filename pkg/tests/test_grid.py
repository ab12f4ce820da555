import math

import numpy as np
import pytest
from matplotlib.path import Path as MplPath

from maplessplan.grid import (BevGrid, Footprint, GridSpec, bilinear_split, bilinear_weights,
                              box_polygon, grid_from_text, grid_to_text, load_grids,
                              rasterize_footprint, rasterize_polygon_mask, save_grids)


def mpl_oracle(fp: Footprint, spec: GridSpec) -> set[int]:
    """Cell centers inside the polygon according to matplotlib's point-in-path test."""
    centers = spec.cell_centers().reshape(-1, 2)
    inside = MplPath(fp.polygon).contains_points(centers, radius=0.0)
    return set(np.flatnonzero(inside).tolist())


def test_spec_rows_cols():
    s = GridSpec(0.4, 140.0, 80.0)
    assert (s.rows, s.cols) == (200, 350)
    with pytest.raises(ValueError):
        GridSpec(0.0, 10, 10)


def test_round_trip_within_half_cell():
    s = GridSpec.ego((3.0, -2.0, 0.7), 0.4, 40.0, 20.0)
    rng = np.random.default_rng(0)
    local = rng.uniform([0, 0], [40, 20], size=(500, 2))
    world = s.grid_to_world(local / 0.4 - 0.5)
    r, c = s.cell_of(world)
    back = s.grid_to_world(np.stack([c, r], axis=-1).astype(float))
    assert np.max(np.linalg.norm(back - world, axis=1)) <= 0.4 / 2 * math.sqrt(2) + 1e-12
    np.testing.assert_allclose(s.grid_to_world(s.world_to_grid(world)), world, atol=1e-9)


def test_square_on_cell_center_gives_2x2_block():
    s = GridSpec(0.5, 10.0, 10.0)
    # 1x1 m square centered on the corner shared by four cells
    fp = Footprint(box_polygon(5.0, 5.0, 0.0, 1.0, 1.0))
    assert len(rasterize_footprint(fp, s)) == 4


def test_outside_footprint_is_empty():
    s = GridSpec(0.5, 10.0, 10.0)
    fp = Footprint.from_pose(50.0, 50.0, 0.3)
    assert len(rasterize_footprint(fp, s)) == 0


def test_rotated_sdv_box_matches_point_in_polygon():
    s = GridSpec(0.4, 20.0, 20.0)
    fp = Footprint.from_pose(10.13, 9.77, math.pi / 4, 4.8, 2.0)
    assert set(rasterize_footprint(fp, s).tolist()) == mpl_oracle(fp, s)


def test_random_footprints_match_oracle():
    s = GridSpec(0.4, 16.0, 12.0, origin=(-1.0, 2.0), yaw=0.3)
    rng = np.random.default_rng(1)
    for _ in range(200):
        x, y = s.grid_to_world(rng.uniform([-5, -5], [s.cols + 5, s.rows + 5]))
        fp = Footprint.from_pose(x, y, rng.uniform(-math.pi, math.pi), rng.uniform(0.5, 6),
                                 rng.uniform(0.5, 3))
        got = set(rasterize_footprint(fp, s).tolist())
        want = mpl_oracle(fp, s)
        # tie cells (center on an edge) may legitimately differ between predicates
        diff = got ^ want
        centers = s.cell_centers().reshape(-1, 2)
        for i in diff:
            d = min(_dist_to_edge(centers[i], fp.polygon))
            assert d < 1e-6


def _dist_to_edge(p, poly):
    for k in range(len(poly)):
        a, b = poly[k], poly[(k + 1) % len(poly)]
        t = np.clip(np.dot(p - a, b - a) / np.dot(b - a, b - a), 0, 1)
        yield float(np.linalg.norm(a + t * (b - a) - p))


def test_footprint_translation_equivariance():
    s = GridSpec(0.5, 20.0, 20.0)
    fp = Footprint.from_pose(7.3, 8.1, 0.4)
    base = rasterize_footprint(fp, s)
    moved = rasterize_footprint(Footprint(fp.polygon + np.array([3 * 0.5, 2 * 0.5])), s)
    np.testing.assert_array_equal(np.sort(moved), np.sort(base + 2 * s.cols + 3))


def test_footprint_area_and_orientation():
    fp = Footprint.from_pose(1.0, 2.0, 1.1, 4.8, 2.0)
    assert fp.area == pytest.approx(4.8 * 2.0)  # positive area: counter-clockwise


def test_bilinear_cell_center_and_midpoint():
    w = [sp.weight for sp in bilinear_split((3.0, 4.0))]
    assert w == [1.0, 0.0, 0.0, 0.0]
    w = [sp.weight for sp in bilinear_split((3.5, 4.5))]
    assert w == [0.25] * 4


def test_bilinear_fractional_offset():
    sp = bilinear_split((2.3, 5.7))
    want = [0.7 * 0.3, 0.3 * 0.3, 0.7 * 0.7, 0.3 * 0.7]
    np.testing.assert_allclose([s.weight for s in sp], want, atol=1e-12)
    assert [(s.row, s.col) for s in sp] == [(5, 2), (5, 3), (6, 2), (6, 3)]


def test_bilinear_out_of_grid_flagged():
    s = GridSpec(1.0, 4.0, 4.0)
    sp = bilinear_split((3.5, 0.5), s)
    assert [x.inside for x in sp] == [True, False, True, False]
    assert sum(x.weight for x in sp) == pytest.approx(1.0)


def test_bilinear_weights_sum_vectorized():
    rng = np.random.default_rng(2)
    _, _, w = bilinear_weights(rng.uniform(-50, 50, size=(10000, 2)))
    assert np.abs(w.sum(axis=-1) - 1).max() < 1e-12
    assert (w >= 0).all()


def test_bevgrid_is_read_only_and_checked():
    s = GridSpec(1.0, 3.0, 2.0)
    g = BevGrid(s, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        g.cells[0, 0] = 1.0
    with pytest.raises(ValueError):
        BevGrid(s, np.zeros((3, 3)))


def test_polygon_mask_concave():
    s = GridSpec(1.0, 6.0, 6.0)
    # L shape
    poly = np.array([[0, 0], [6, 0], [6, 2], [2, 2], [2, 6], [0, 6]], dtype=float)
    m = rasterize_polygon_mask(poly, s)
    want = MplPath(poly).contains_points(s.cell_centers().reshape(-1, 2)).reshape(s.shape)
    np.testing.assert_array_equal(m, want)


def test_binary_container_round_trip(tmp_path):
    s = GridSpec(0.4, 4.0, 2.0, origin=(1.5, -2.0), yaw=0.2)
    rng = np.random.default_rng(3)
    chans = rng.random((3, *s.shape))
    save_grids(tmp_path / "g.bevg", s, chans, dtype="float64", names=["a", "b", "c"])
    s2, arr, names = load_grids(tmp_path / "g.bevg")
    assert s2 == s and names == ["a", "b", "c"]
    np.testing.assert_array_equal(arr, chans)
    save_grids(tmp_path / "f.bevg", s, chans)
    _, arr32, _ = load_grids(tmp_path / "f.bevg")
    np.testing.assert_array_equal(arr32, chans.astype(np.float32).astype(float))
    raw = (tmp_path / "f.bevg").read_bytes()
    assert raw[:4] == b"BEVG"


def test_text_export_is_lossless():
    s = GridSpec(0.4, 2.0, 1.2)
    g = BevGrid(s, np.random.default_rng(4).random(s.shape))
    g2 = grid_from_text(grid_to_text(g))
    assert g2.spec == s
    np.testing.assert_array_equal(g2.cells, g.cells)
