"""Building-level damage attribution and regional accounting."""

from datetime import date, timedelta

import numpy as np
import pytest

from conftest import make_meta
from ltccd.aggregate import (
    TOTAL_REGION,
    BuildingDamageFlag,
    BuildingFootprint,
    RegionSeries,
    damage_percent,
    load_footprints,
    load_series,
    mark_buildings,
    rate_change,
    region_timeseries,
    save_flags,
    save_series,
    validly_monitored,
)
from ltccd.errors import AccountingError, UndefinedRateError
from ltccd.geometry import rect_overlap_area
from ltccd.raster import MaskGrid

D0 = date(2023, 10, 17)


def rect(x0, y0, x1, y1):
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))


def mask_from_flags(flags, meta=None):
    flags = np.atleast_2d(np.asarray(flags, dtype=np.uint8))
    meta = meta or make_meta(flags.shape[1], flags.shape[0])
    return MaskGrid(meta=meta, values=flags)


def first_dates_like(mask, ordinal=None):
    ordinal = D0.toordinal() if ordinal is None else ordinal
    return np.where(mask.values == 1, ordinal, 0).astype(np.int64)


def test_footprint_area_from_shoelace():
    fp = BuildingFootprint("b1", rect(0, 0, 16, 10), "west")
    assert fp.area_m2 == 160.0


def test_footprint_needs_three_vertices():
    with pytest.raises(ValueError):
        BuildingFootprint("b1", ((0, 0), (1, 1)), "west")


def test_building_inside_one_flagged_pixel_is_damaged():
    cumulative = mask_from_flags([[1]])
    fp = BuildingFootprint("b1", rect(10, 10, 26, 20), "west")  # 160 m2
    flags = mark_buildings([fp], cumulative, first_dates_like(cumulative))
    assert flags[0].coverage_fraction == pytest.approx(1.0)
    assert flags[0].damaged
    assert flags[0].first_detected == D0


def test_building_straddling_flag_boundary_is_half_covered():
    cumulative = mask_from_flags([[1, 0]])
    # 20 m wide, centered on the shared pixel edge at x = 40
    fp = BuildingFootprint("b1", rect(30, 10, 50, 20), "west")
    flags = mark_buildings([fp], cumulative, first_dates_like(cumulative))
    assert flags[0].coverage_fraction == pytest.approx(0.5)
    assert not flags[0].damaged
    assert flags[0].first_detected is None


def test_coverage_exactly_at_threshold_counts_as_damaged():
    cumulative = mask_from_flags([[0, 1, 1, 1, 0]])
    # integer-coordinate overlaps: 1980 of 2000 m2 flagged, i.e. exactly 0.99
    fp = BuildingFootprint("b1", rect(61, 10, 161, 30), "west")
    flags = mark_buildings([fp], cumulative, first_dates_like(cumulative))
    assert flags[0].coverage_fraction == 0.99
    assert flags[0].damaged

    lowered = mask_from_flags([[0, 1, 1, 0, 0]])
    flags = mark_buildings([fp], lowered, first_dates_like(lowered))
    assert flags[0].coverage_fraction < 0.99
    assert not flags[0].damaged


def test_building_off_grid_is_out_of_coverage():
    cumulative = mask_from_flags([[1]])
    fp = BuildingFootprint("b1", rect(500, 500, 520, 520), "west")
    flags = mark_buildings([fp], cumulative, first_dates_like(cumulative))
    assert flags[0].out_of_coverage
    assert not flags[0].damaged


def test_first_detected_takes_earliest_overlapped_pixel():
    cumulative = mask_from_flags([[1, 1]])
    first = np.array([[D0.toordinal() + 24, D0.toordinal()]], dtype=np.int64)
    fp = BuildingFootprint("b1", rect(10, 10, 70, 30), "west")
    flags = mark_buildings([fp], cumulative, first)
    assert flags[0].first_detected == D0


def test_validly_monitored_requires_repeat_coverage():
    meta = make_meta(2, 1)
    always = MaskGrid(meta=meta, values=np.array([[1, 0]], np.uint8))
    never = MaskGrid(meta=meta, values=np.array([[0, 0]], np.uint8))
    west = BuildingFootprint("w", rect(5, 5, 25, 25), "west")
    east = BuildingFootprint("e", rect(45, 5, 65, 25), "east")
    assert validly_monitored([west, east], [always, always]) == {"w"}
    assert validly_monitored([west, east], [always, never]) == set()
    assert validly_monitored([west, east], [always, never], min_surveys=1) == {"w"}


def test_damage_percent_arithmetic_and_bounds():
    assert damage_percent(5, 10) == 50.0
    assert damage_percent(0, 0) == 0.0
    with pytest.raises(AccountingError):
        damage_percent(11, 10)
    with pytest.raises(AccountingError):
        damage_percent(-1, 10)


def _flag(fp_id, damaged, when=None, out=False):
    return BuildingDamageFlag(
        id=fp_id, damaged=damaged, first_detected=when,
        coverage_fraction=1.0 if damaged else 0.0, out_of_coverage=out,
    )


def test_region_timeseries_cumulative_counts():
    footprints = (
        [BuildingFootprint(f"w{i}", rect(i * 30, 0, i * 30 + 20, 20), "west") for i in range(5)]
        + [BuildingFootprint(f"e{i}", rect(i * 30, 40, i * 30 + 20, 60), "east") for i in range(5)]
    )
    d1, d2 = D0, D0 + timedelta(days=12)
    flags = (
        [_flag("w0", True, d1), _flag("w1", True, d1), _flag("w2", True, d2)]
        + [_flag("w3", False), _flag("w4", False)]
        + [_flag("e0", True, d2)]
        + [_flag(f"e{i}", False) for i in range(1, 5)]
    )
    series = {s.region_id: s for s in region_timeseries(flags, footprints, [d1, d2])}
    assert series["west"].counts == [2, 3]
    assert series["west"].percents == [40.0, 60.0]
    assert series["east"].counts == [0, 1]
    assert series[TOTAL_REGION].counts == [2, 4]
    assert series[TOTAL_REGION].percents == [20.0, 40.0]
    assert series["west"].count_at(d1 - timedelta(days=1)) == 0
    assert series["west"].count_at(d2 + timedelta(days=99)) == 3


def test_region_timeseries_excludes_out_of_coverage_from_totals():
    footprints = [
        BuildingFootprint("a", rect(0, 0, 20, 20), "west"),
        BuildingFootprint("b", rect(40, 0, 60, 20), "west"),
    ]
    flags = [_flag("a", True, D0), _flag("b", False, out=True)]
    series = region_timeseries(flags, footprints, [D0])
    assert series[0].counts == [1]
    assert series[0].percents == [100.0]  # denominator shrank to 1


def test_region_timeseries_rejects_unattributed_buildings():
    footprints = [BuildingFootprint("a", rect(0, 0, 20, 20), "west")]
    with pytest.raises(AccountingError):
        region_timeseries([_flag("ghost", True, D0)], footprints, [D0])
    with pytest.raises(AccountingError):
        region_timeseries([_flag("a", True, None)], footprints, [D0])


def test_rate_change_between_windows():
    d0 = date(2023, 10, 7)
    dates = [d0 + timedelta(days=n) for n in (0, 10, 20)]
    series = RegionSeries("total", dates, [0, 23000, 28060], [0.0, 0.0, 0.0])
    drop = rate_change(series, (dates[0], dates[1]), (dates[1], dates[2]))
    assert drop == pytest.approx(78.0)


def test_rate_change_zero_baseline_is_undefined():
    dates = [D0, D0 + timedelta(days=10), D0 + timedelta(days=20)]
    series = RegionSeries("total", dates, [0, 0, 50], [0.0, 0.0, 0.0])
    with pytest.raises(UndefinedRateError):
        rate_change(series, (dates[0], dates[1]), (dates[1], dates[2]))


def test_rate_change_window_validation():
    series = RegionSeries("total", [D0], [1], [1.0])
    with pytest.raises(ValueError):
        rate_change(series, (D0, D0), (D0, D0 + timedelta(days=1)))
    with pytest.raises(ValueError):
        rate_change(
            series,
            (D0, D0 + timedelta(days=10)),
            (D0 + timedelta(days=5), D0 + timedelta(days=15)),
        )


def test_flags_geojson_round_trip(tmp_path):
    footprints = [
        BuildingFootprint("a", rect(0, 0, 20, 20), "west"),
        BuildingFootprint("b", rect(40, 0, 60, 20), "east"),
    ]
    flags = [_flag("a", True, D0), _flag("b", False)]
    path = tmp_path / "flags.geojson"
    save_flags(flags, footprints, path)
    again = load_footprints(path)
    assert [fp.id for fp in again] == ["a", "b"]
    assert [fp.region_id for fp in again] == ["west", "east"]
    assert again[0].area_m2 == pytest.approx(400.0)


def test_series_csv_round_trip(tmp_path):
    series = [
        RegionSeries("west", [D0, D0 + timedelta(days=12)], [1, 2], [10.0, 20.0]),
        RegionSeries("total", [D0, D0 + timedelta(days=12)], [1, 2], [5.0, 10.0]),
    ]
    path = tmp_path / "series.csv"
    save_series(series, path)
    assert path.read_text().splitlines()[0] == "region_id,date,count,percent"
    again = load_series(path)
    assert {s.region_id for s in again} == {"west", "total"}
    west = next(s for s in again if s.region_id == "west")
    assert west.counts == [1, 2]
    assert west.percents == [10.0, 20.0]


def test_coverage_matches_fine_sampling_oracle():
    """Coverage fractions agree with a 1 m point-sampling estimate."""
    rng = np.random.default_rng(23)
    meta = make_meta(4, 4)  # 160 m square scene
    for trial in range(8):
        values = rng.integers(0, 2, size=(4, 4)).astype(np.uint8)
        cumulative = MaskGrid(meta=meta, values=values)
        angles = np.sort(rng.uniform(0.0, 2 * np.pi, size=7))
        radius = rng.uniform(8.0, 25.0)
        center = rng.uniform(40.0, 120.0, size=2)
        poly = tuple(
            (center[0] + radius * float(np.cos(a)), center[1] + radius * float(np.sin(a)))
            for a in angles
        )
        fp = BuildingFootprint(f"t{trial}", poly, "west")
        got = mark_buildings([fp], cumulative, first_dates_like(cumulative))[0]

        # re-derive coverage from 1 m cells; integer cell edges never
        # straddle the 40 m pixel boundaries, so attribution is unambiguous
        flagged = total = 0.0
        for x in range(int(center[0] - radius) - 1, int(center[0] + radius) + 2):
            for y in range(int(center[1] - radius) - 1, int(center[1] + radius) + 2):
                area = rect_overlap_area(poly, x, y, x + 1.0, y + 1.0)
                if area == 0.0:
                    continue
                total += area
                row, col = meta.point_to_pixel(x + 0.5, y + 0.5)
                if 0 <= row < 4 and 0 <= col < 4 and values[row, col] == 1:
                    flagged += area
        assert total > 0
        assert got.coverage_fraction == pytest.approx(flagged / total, abs=0.02)
