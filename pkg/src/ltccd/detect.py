"""Pixelwise damage classification and persistence tracking.

A pixel is classified as damaged at a timestep when the drop in mean
coherence against the pre-event baseline crosses a fixed threshold and, at
the same time, its z-score against the pre-event standard deviation crosses
the z threshold. Validity masking is a separate product: the classification
itself follows the two-gate rule only, and evaluation scopes decide whether
to restrict to valid areas. Persistence confirmation is a retrospective
quality layer over the detection series, never a gate on reporting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import OrderingError
from .raster import (
    MASK_NODATA,
    CoherenceGrid,
    MaskGrid,
    load_grid,
    load_mask,
    require_aligned,
    write_outputs,
)
from .reduce import StackSummary


@dataclass(frozen=True)
class DetectorConfig:
    """Thresholds for the change/z-score damage gates."""

    k: float = -0.20              # coherence-change threshold, must be negative
    z_threshold: float = -2.0
    sigma_floor: float = 1e-6
    persistence_window_days: int = 31

    def __post_init__(self):
        if self.k >= 0:
            raise ValueError(f"k must be negative, got {self.k}")
        if self.z_threshold >= 0:
            raise ValueError(f"z_threshold must be negative, got {self.z_threshold}")
        if self.sigma_floor <= 0:
            raise ValueError(f"sigma_floor must be positive, got {self.sigma_floor}")
        if self.persistence_window_days < 0:
            raise ValueError(
                f"persistence_window_days must be nonnegative, got {self.persistence_window_days}"
            )


@dataclass
class DetectionGrid:
    """Per-pixel classification outcome at one monitoring timestep."""

    meta: object
    delta: np.ndarray   # float32 coherence change, NaN nodata
    z: np.ndarray       # float32 z-score, NaN nodata
    flag: np.ndarray    # uint8 {0,1}, 255 nodata
    timestep_date: date


@dataclass(frozen=True)
class DamageRecord:
    """First detection and (optional) confirmation for one flagged pixel."""

    pixel: tuple[int, int]
    first_detected: date
    confirmed: Optional[date] = None
    days_to_confirm: Optional[int] = None


def classify_damage(
    conflict: StackSummary, pre: StackSummary, cfg: DetectorConfig
) -> DetectionGrid:
    """Classify damage from conflict vs pre-event summaries.

    delta = conflict mean - pre mean; z = delta / max(pre std, sigma_floor);
    flag = (delta < k) AND (z < z_threshold). Nodata in any input propagates.
    """
    meta = require_aligned(conflict.meta, pre.meta)
    sigma = np.maximum(pre.std.astype(np.float64), cfg.sigma_floor)
    delta = conflict.mean.astype(np.float64) - pre.mean.astype(np.float64)
    with np.errstate(invalid="ignore"):
        z = delta / sigma
        flagged = (delta < cfg.k) & (z < cfg.z_threshold)
    flag = np.where(flagged, 1, 0).astype(np.uint8)
    flag[np.isnan(delta) | np.isnan(sigma)] = MASK_NODATA
    return DetectionGrid(
        meta=meta,
        delta=delta.astype(np.float32),
        z=z.astype(np.float32),
        flag=flag,
        timestep_date=conflict.timestep_date or date.min,
    )


def compute_valid_mask(pre: StackSummary, cfg: DetectorConfig) -> MaskGrid:
    """Mark pixels whose pre-event variability keeps the fixed threshold
    at or beyond the z cutoff: k / max(std, sigma_floor) <= z_threshold.

    Zero-variance pixels clamp to sigma_floor and come out maximally valid.
    """
    sigma = np.maximum(pre.std.astype(np.float64), cfg.sigma_floor)
    with np.errstate(invalid="ignore"):
        valid = (cfg.k / sigma) <= cfg.z_threshold
    values = np.where(valid, 1, 0).astype(np.uint8)
    values[np.isnan(pre.std)] = MASK_NODATA
    return MaskGrid(meta=pre.meta, values=values)


def _flag_stack(detections: Sequence[DetectionGrid]) -> tuple[np.ndarray, np.ndarray]:
    if not detections:
        raise ValueError("no detections supplied")
    dates = [d.timestep_date for d in detections]
    for earlier, later in zip(dates, dates[1:]):
        if earlier > later:
            raise OrderingError("detections are not sorted by timestep_date")
    require_aligned(*(d.meta for d in detections))
    flags = np.stack([d.flag == 1 for d in detections])
    ordinals = np.array([d.toordinal() for d in dates], dtype=np.int64)
    return ordinals, flags


def confirm_persistence(
    detections: Sequence[DetectionGrid],
    window_days: int = 31,
) -> tuple[MaskGrid, list[DamageRecord]]:
    """Track first detection and confirmation per pixel.

    The confirmed mask marks pixels whose first re-detection arrives within
    window_days. Flagged-but-unconfirmed pixels are reported as records with
    no confirmation date; they are never deleted here.
    """
    ordinals, flags = _flag_stack(detections)
    meta = detections[0].meta
    any_flag = flags.any(axis=0)
    first_idx = np.argmax(flags, axis=0)
    rest = flags.copy()
    np.put_along_axis(rest, first_idx[None, ...], False, axis=0)
    has_second = rest.any(axis=0)
    second_idx = np.argmax(rest, axis=0)
    days = ordinals[second_idx] - ordinals[first_idx]
    confirmed = any_flag & has_second & (days <= window_days)
    mask = MaskGrid(meta=meta, values=np.where(confirmed, 1, 0).astype(np.uint8))

    records: list[DamageRecord] = []
    for row, col in zip(*np.nonzero(any_flag)):
        first = date.fromordinal(int(ordinals[first_idx[row, col]]))
        if has_second[row, col]:
            second = date.fromordinal(int(ordinals[second_idx[row, col]]))
            records.append(DamageRecord(
                pixel=(int(row), int(col)),
                first_detected=first,
                confirmed=second,
                days_to_confirm=int(days[row, col]),
            ))
        else:
            records.append(DamageRecord(pixel=(int(row), int(col)), first_detected=first))
    return mask, records


def accumulate_damage(
    detections: Sequence[DetectionGrid],
    through: Optional[date] = None,
) -> MaskGrid:
    """Pixelwise OR of damage flags over all timesteps up to ``through``.

    Nodata timesteps do not contribute; a pixel unobserved at every included
    timestep stays nodata.
    """
    ordinals, flags = _flag_stack(detections)
    meta = detections[0].meta
    if through is not None:
        keep = ordinals <= through.toordinal()
        flags = flags[keep]
    observed = np.stack([d.flag != MASK_NODATA for d in detections])
    if through is not None:
        observed = observed[keep]
    if flags.shape[0] == 0:
        values = np.zeros((meta.height, meta.width), dtype=np.uint8)
        return MaskGrid(meta=meta, values=values)
    values = np.where(flags.any(axis=0), 1, 0).astype(np.uint8)
    values[~observed.any(axis=0)] = MASK_NODATA
    return MaskGrid(meta=meta, values=values)


def first_detection_grid(detections: Sequence[DetectionGrid]) -> np.ndarray:
    """Per-pixel first-detection date as proleptic ordinals; 0 where never flagged."""
    ordinals, flags = _flag_stack(detections)
    any_flag = flags.any(axis=0)
    first_idx = np.argmax(flags, axis=0)
    out = np.where(any_flag, ordinals[first_idx], 0)
    return out.astype(np.int64)


def persistence_cdf(records: Sequence[DamageRecord]) -> list[tuple[int, float]]:
    """Empirical CDF of days-to-confirmation among confirmed records."""
    days = np.array(
        sorted(r.days_to_confirm for r in records if r.days_to_confirm is not None),
        dtype=np.int64,
    )
    if days.size == 0:
        return []
    table = []
    n = days.size
    for value in np.unique(days):
        table.append((int(value), float(np.searchsorted(days, value, side="right") / n)))
    return table


def cdf_at(table: list[tuple[int, float]], days: int) -> float:
    """Evaluate an empirical CDF table at a day count."""
    prob = 0.0
    for value, cum in table:
        if value <= days:
            prob = cum
        else:
            break
    return prob


def save_detection(det: DetectionGrid, out_dir, basename: str) -> None:
    """Persist delta/z as float rasters and the flag as a mask raster."""
    out_dir = Path(out_dir)
    write_outputs(CoherenceGrid(meta=det.meta, values=det.delta), out_dir / f"{basename}_delta.tif", "statistic")
    write_outputs(CoherenceGrid(meta=det.meta, values=det.z), out_dir / f"{basename}_z.tif", "statistic")
    write_outputs(MaskGrid(meta=det.meta, values=det.flag), out_dir / f"{basename}_flag.tif", "mask")


def load_detection(out_dir, basename: str, timestep_date: date) -> DetectionGrid:
    out_dir = Path(out_dir)
    delta = load_grid(out_dir / f"{basename}_delta.tif")
    z = load_grid(out_dir / f"{basename}_z.tif")
    flag = load_mask(out_dir / f"{basename}_flag.tif")
    require_aligned(delta.meta, z.meta, flag.meta)
    return DetectionGrid(
        meta=delta.meta,
        delta=delta.values,
        z=z.values,
        flag=flag.values,
        timestep_date=timestep_date,
    )


def save_damage_records(records: Sequence[DamageRecord], path) -> None:
    """CSV with columns row,col,first_detected,confirmed,days_to_confirm."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "first_detected", "confirmed", "days_to_confirm"])
        for r in sorted(records, key=lambda r: r.pixel):
            writer.writerow([
                r.pixel[0],
                r.pixel[1],
                r.first_detected.isoformat(),
                r.confirmed.isoformat() if r.confirmed else "",
                r.days_to_confirm if r.days_to_confirm is not None else "",
            ])


def load_damage_records(path) -> list[DamageRecord]:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(DamageRecord(
                pixel=(int(row["row"]), int(row["col"])),
                first_detected=date.fromisoformat(row["first_detected"]),
                confirmed=date.fromisoformat(row["confirmed"]) if row["confirmed"] else None,
                days_to_confirm=int(row["days_to_confirm"]) if row["days_to_confirm"] else None,
            ))
    return records
