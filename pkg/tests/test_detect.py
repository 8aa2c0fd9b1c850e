"""Damage classification, validity masking, persistence, accumulation."""

from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import make_meta, make_summary
from ltccd import detect
from ltccd.detect import (
    DamageRecord,
    DetectionGrid,
    DetectorConfig,
    accumulate_damage,
    cdf_at,
    classify_damage,
    compute_valid_mask,
    confirm_persistence,
    first_detection_grid,
    load_damage_records,
    load_detection,
    persistence_cdf,
    save_damage_records,
    save_detection,
)
from ltccd.errors import OrderingError

CFG = DetectorConfig()
D0 = date(2023, 10, 17)


def test_defaults():
    assert CFG.k == -0.20
    assert CFG.z_threshold == -2.0
    assert CFG.persistence_window_days == 31


@pytest.mark.parametrize(
    "kwargs", [dict(k=0.1), dict(z_threshold=1.0), dict(sigma_floor=0.0),
               dict(persistence_window_days=-1)],
)
def test_detector_config_rejects_wrong_signs(kwargs):
    with pytest.raises(ValueError):
        DetectorConfig(**kwargs)


def test_classify_flags_large_coherent_drop():
    pre = make_summary([[0.50]], 0.12, timestep_date=D0)
    after = make_summary([[0.20]], 0.0, timestep_date=D0)
    det = classify_damage(after, pre, CFG)
    assert det.delta[0, 0] == pytest.approx(-0.30, abs=1e-6)
    assert det.z[0, 0] == pytest.approx(-2.5, abs=1e-5)
    assert det.flag[0, 0] == 1
    assert det.timestep_date == D0


def test_classify_requires_both_gates():
    # same drop but noisy history: the z gate holds the flag back
    pre = make_summary([[0.50]], 0.20)
    after = make_summary([[0.20]], 0.0)
    det = classify_damage(after, pre, CFG)
    assert det.z[0, 0] == pytest.approx(-1.5, abs=1e-5)
    assert det.flag[0, 0] == 0

    # z clears but the absolute drop is too small
    small = classify_damage(make_summary([[0.45]], 0.01), make_summary([[0.50]], 0.01), CFG)
    assert small.flag[0, 0] == 0


def test_classify_gates_are_strict_inequalities():
    # exact binary fractions keep the comparison on the boundary
    cfg = DetectorConfig(k=-0.25, z_threshold=-2.0)
    pre = make_summary([[0.75]], 0.125)
    on_k = classify_damage(make_summary([[0.5]], 0.0), pre, cfg)
    assert on_k.delta[0, 0] == -0.25
    assert on_k.flag[0, 0] == 0

    on_z = classify_damage(make_summary([[0.4375]], 0.0), make_summary([[0.75]], 0.15625), cfg)
    assert on_z.z[0, 0] == -2.0
    assert on_z.flag[0, 0] == 0

    past = classify_damage(make_summary([[0.4375]], 0.125), pre, cfg)
    assert past.z[0, 0] == -2.5
    assert past.flag[0, 0] == 1


def test_classify_zero_sigma_uses_floor():
    pre = make_summary([[0.50]], 0.0)
    det = classify_damage(make_summary([[0.20]], 0.0), pre, CFG)
    assert det.flag[0, 0] == 1
    assert det.z[0, 0] < -1e4


def test_classify_marks_nodata():
    pre = make_summary([[np.nan, 0.5]], [[0.05, np.nan]])
    after = make_summary([[0.2, 0.2]], 0.0)
    det = classify_damage(after, pre, CFG)
    assert det.flag[0, 0] == 255
    assert det.flag[0, 1] == 255
    assert np.isnan(det.delta[0, 0])


def test_valid_mask_sigma_rule():
    pre = make_summary([[0.6, 0.6, 0.6, np.nan]], [[0.08, 0.12, 0.0, np.nan]])
    mask = compute_valid_mask(pre, CFG)
    assert mask.values.tolist() == [[1, 0, 1, 255]]


def test_valid_mask_boundary_is_inclusive():
    cfg = DetectorConfig(k=-0.125, z_threshold=-2.0)  # sigma limit exactly 0.0625
    pre = make_summary([[0.6, 0.6]], [[0.0625, 0.0626]])
    mask = compute_valid_mask(pre, cfg)
    assert mask.values.tolist() == [[1, 0]]


def _grid(flags, when, meta=None):
    flags = np.atleast_2d(np.asarray(flags, dtype=np.uint8))
    meta = meta or make_meta(flags.shape[1], flags.shape[0])
    zeros = np.zeros(flags.shape, dtype=np.float32)
    return DetectionGrid(meta=meta, delta=zeros, z=zeros, flag=flags, timestep_date=when)


def test_confirm_persistence_windows_and_records():
    # pixel 0: re-detected after 12 days; pixel 1: never again;
    # pixel 2: re-detected but only after 40 days
    dets = [
        _grid([[1, 1, 1]], D0),
        _grid([[1, 0, 0]], D0 + timedelta(days=12)),
        _grid([[0, 0, 1]], D0 + timedelta(days=40)),
    ]
    mask, records = confirm_persistence(dets, window_days=31)
    assert mask.values.tolist() == [[1, 0, 0]]

    by_pixel = {r.pixel: r for r in records}
    assert set(by_pixel) == {(0, 0), (0, 1), (0, 2)}
    assert by_pixel[(0, 0)].confirmed == D0 + timedelta(days=12)
    assert by_pixel[(0, 0)].days_to_confirm == 12
    assert by_pixel[(0, 1)].confirmed is None
    # the late re-detection is still recorded even though the mask rejects it
    assert by_pixel[(0, 2)].confirmed == D0 + timedelta(days=40)
    assert by_pixel[(0, 2)].days_to_confirm == 40


def test_confirm_persistence_requires_sorted_input():
    dets = [_grid([[1]], D0 + timedelta(days=12)), _grid([[1]], D0)]
    with pytest.raises(OrderingError):
        confirm_persistence(dets, window_days=31)


def test_confirm_persistence_rejects_empty():
    with pytest.raises(ValueError, match="no detections"):
        confirm_persistence([], window_days=31)


def test_accumulate_damage_is_pixelwise_or():
    dets = [
        _grid([[1, 255, 0, 0]], D0),
        _grid([[0, 255, 255, 1]], D0 + timedelta(days=12)),
    ]
    assert accumulate_damage(dets).values.tolist() == [[1, 255, 0, 1]]
    # cutting off at the first date drops the later flag
    assert accumulate_damage(dets, through=D0).values.tolist() == [[1, 255, 0, 0]]


def test_accumulate_damage_before_first_timestep_is_all_clear():
    dets = [_grid([[1, 0]], D0)]
    values = accumulate_damage(dets, through=D0 - timedelta(days=1)).values
    assert values.tolist() == [[0, 0]]


@settings(max_examples=40, deadline=None)
@given(
    hnp.arrays(np.uint8, (4, 3, 3), elements=st.sampled_from([0, 0, 1, 255])),
)
def test_accumulate_matches_bruteforce_or(stack):
    dets = [_grid(layer, D0 + timedelta(days=12 * i)) for i, layer in enumerate(stack)]
    got = accumulate_damage(dets).values
    observed = stack != 255
    expected = np.where(
        ((stack == 1) & observed).any(axis=0), 1, np.where(observed.any(axis=0), 0, 255)
    ).astype(np.uint8)
    assert np.array_equal(got, expected)


def test_first_detection_grid_reports_earliest_ordinal():
    dets = [
        _grid([[0, 1]], D0),
        _grid([[1, 1]], D0 + timedelta(days=12)),
    ]
    first = first_detection_grid(dets)
    assert first.tolist() == [[(D0 + timedelta(days=12)).toordinal(), D0.toordinal()]]
    assert first_detection_grid([_grid([[0, 0]], D0)]).tolist() == [[0, 0]]


def test_persistence_cdf_small_table():
    records = [
        DamageRecord((0, 0), D0, D0 + timedelta(days=12), 12),
        DamageRecord((0, 1), D0, D0 + timedelta(days=24), 24),
        DamageRecord((0, 2), D0),  # unconfirmed, excluded
    ]
    table = persistence_cdf(records)
    assert table == [(12, 0.5), (24, 1.0)]
    assert cdf_at(table, 11) == 0.0
    assert cdf_at(table, 12) == 0.5
    assert cdf_at(table, 23) == 0.5
    assert cdf_at(table, 365) == 1.0


def test_persistence_cdf_empty():
    assert persistence_cdf([DamageRecord((0, 0), D0)]) == []
    assert cdf_at([], 10) == 0.0


def test_detection_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    meta = make_meta(3, 2)
    det = DetectionGrid(
        meta=meta,
        delta=rng.normal(size=(2, 3)).astype(np.float32),
        z=rng.normal(size=(2, 3)).astype(np.float32),
        flag=np.array([[1, 0, 255], [0, 1, 0]], dtype=np.uint8),
        timestep_date=D0,
    )
    save_detection(det, tmp_path, "conflict_2023-10-17")
    again = load_detection(tmp_path, "conflict_2023-10-17", D0)
    assert again.delta.tobytes() == det.delta.tobytes()
    assert again.z.tobytes() == det.z.tobytes()
    assert np.array_equal(again.flag, det.flag)
    assert again.timestep_date == D0


def test_damage_records_round_trip(tmp_path):
    records = [
        DamageRecord((3, 1), D0, D0 + timedelta(days=12), 12),
        DamageRecord((0, 2), D0 + timedelta(days=24)),
    ]
    path = tmp_path / "records.csv"
    save_damage_records(records, path)
    again = load_damage_records(path)
    assert sorted(again, key=lambda r: r.pixel) == sorted(records, key=lambda r: r.pixel)
    header = path.read_text().splitlines()[0]
    assert header == "row,col,first_detected,confirmed,days_to_confirm"
