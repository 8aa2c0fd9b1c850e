"""Grid metadata math and GeoTIFF round-trips."""

import logging

import numpy as np
import pytest

from conftest import make_meta
from ltccd.errors import AlignmentError, RasterIOError
from ltccd.raster import (
    CoherenceGrid,
    GridMeta,
    MaskGrid,
    clamp_coherence,
    load_aligned_stack,
    load_grid,
    load_mask,
    require_aligned,
    write_outputs,
)


def test_point_to_pixel_floors_into_cells():
    meta = make_meta(4, 4, pixel_size=40.0)  # covers x 0..160, y 0..160
    assert meta.point_to_pixel(0.0, 160.0) == (0, 0)
    assert meta.point_to_pixel(50.0, 130.0) == (0, 1)
    assert meta.point_to_pixel(50.0, 119.0) == (1, 1)
    assert meta.point_to_pixel(159.9, 0.1) == (3, 3)


def test_bounds_and_pixel_bounds_are_consistent():
    meta = make_meta(4, 4, pixel_size=40.0)
    assert meta.bounds == (0.0, 0.0, 160.0, 160.0)
    assert meta.pixel_bounds(0, 0) == (0.0, 120.0, 40.0, 160.0)
    assert meta.pixel_bounds(3, 3) == (120.0, 0.0, 160.0, 40.0)


def test_contains_point_excludes_far_side():
    meta = make_meta(4, 4, pixel_size=40.0)
    assert meta.contains_point(0.0, 159.0)
    assert not meta.contains_point(160.0, 80.0)
    assert not meta.contains_point(-0.1, 80.0)


def test_grid_meta_equality_treats_nan_nodata_as_equal():
    a = make_meta(4, 4)
    b = make_meta(4, 4)
    assert a == b
    assert a.matches(b)
    assert a != make_meta(5, 4)
    assert GridMeta(32636, 0.0, 160.0, 4, 4, 40.0, nodata=255.0) != a


def test_grid_meta_rejects_degenerate_shapes():
    with pytest.raises(ValueError):
        GridMeta(32636, 0.0, 0.0, 0, 4)
    with pytest.raises(ValueError):
        GridMeta(32636, 0.0, 0.0, 4, 4, pixel_size=0.0)


def test_coherence_grid_casts_to_float32():
    grid = CoherenceGrid(meta=make_meta(2, 2), values=np.zeros((2, 2), dtype=np.float64))
    assert grid.values.dtype == np.float32


def test_coherence_grid_shape_mismatch():
    with pytest.raises(ValueError):
        CoherenceGrid(meta=make_meta(2, 2), values=np.zeros((3, 2), dtype=np.float32))


def test_mask_grid_rejects_stray_values():
    with pytest.raises(ValueError, match="outside"):
        MaskGrid(meta=make_meta(2, 2), values=np.full((2, 2), 7, dtype=np.uint8))


def test_coherence_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    values = rng.random((5, 7), dtype=np.float32)
    values[1, 2] = np.nan
    grid = CoherenceGrid(meta=make_meta(7, 5), values=values)
    path = tmp_path / "coh.tif"
    write_outputs(grid, path, "coherence")
    again = load_grid(path)
    assert again.values.tobytes() == values.tobytes()
    assert again.meta == grid.meta


def test_statistic_round_trip_preserves_out_of_range_values(tmp_path):
    values = np.array([[-2.5, 0.5], [3.0, np.nan]], dtype=np.float32)
    grid = CoherenceGrid(meta=make_meta(2, 2), values=values)
    path = tmp_path / "stat.tif"
    write_outputs(grid, path, "statistic")
    assert load_grid(path).values.tobytes() == values.tobytes()


def test_mask_round_trip(tmp_path):
    values = np.array([[0, 1], [255, 1]], dtype=np.uint8)
    mask = MaskGrid(meta=make_meta(2, 2), values=values)
    path = tmp_path / "mask.tif"
    write_outputs(mask, path, "mask")
    again = load_mask(path)
    assert np.array_equal(again.values, values)
    assert again.meta.nodata == 255.0


def test_write_outputs_missing_directory(tmp_path):
    grid = CoherenceGrid(meta=make_meta(2, 2), values=np.zeros((2, 2)))
    with pytest.raises(RasterIOError):
        write_outputs(grid, tmp_path / "absent" / "x.tif", "coherence")


def test_write_outputs_unknown_kind(tmp_path):
    grid = CoherenceGrid(meta=make_meta(2, 2), values=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        write_outputs(grid, tmp_path / "x.tif", "velocity")


def test_load_grid_missing_file(tmp_path):
    with pytest.raises(RasterIOError):
        load_grid(tmp_path / "nope.tif")


def test_clamp_coherence_counts_and_logs(caplog):
    values = np.array([[1.0003, -0.2], [0.5, np.nan]], dtype=np.float32)
    grid = CoherenceGrid(meta=make_meta(2, 2), values=values)
    with caplog.at_level(logging.WARNING):
        clamped = clamp_coherence(grid, label="unit")
    assert clamped == 2
    assert grid.values[0, 0] == 1.0
    assert grid.values[0, 1] == 0.0
    assert grid.values[1, 0] == np.float32(0.5)
    assert np.isnan(grid.values[1, 1])
    assert any("unit" in r.message for r in caplog.records)


def test_clamp_coherence_noop_inside_range():
    grid = CoherenceGrid(meta=make_meta(2, 2), values=np.full((2, 2), 0.5, np.float32))
    assert clamp_coherence(grid) == 0


def test_load_aligned_stack_round_trip(tmp_path):
    meta = make_meta(3, 3)
    paths = []
    for i in range(3):
        grid = CoherenceGrid(meta=meta, values=np.full((3, 3), 0.1 * (i + 1), np.float32))
        path = tmp_path / f"g{i}.tif"
        write_outputs(grid, path, "coherence")
        paths.append(path)
    grids = load_aligned_stack(paths)
    assert len(grids) == 3
    assert all(g.meta == meta for g in grids)


def test_load_aligned_stack_names_offending_file(tmp_path):
    ok = CoherenceGrid(meta=make_meta(3, 3), values=np.zeros((3, 3)))
    shifted_meta = GridMeta(32636, 40.0, 120.0, 3, 3, 40.0)  # one pixel east
    bad = CoherenceGrid(meta=shifted_meta, values=np.zeros((3, 3)))
    write_outputs(ok, tmp_path / "ok.tif", "coherence")
    write_outputs(bad, tmp_path / "shifted.tif", "coherence")
    with pytest.raises(AlignmentError, match="shifted.tif"):
        load_aligned_stack([tmp_path / "ok.tif", tmp_path / "shifted.tif"])


def test_require_aligned_returns_reference_meta():
    meta = make_meta(2, 2)
    assert require_aligned(meta, make_meta(2, 2)) == meta
    with pytest.raises(AlignmentError):
        require_aligned(meta, make_meta(3, 2))
