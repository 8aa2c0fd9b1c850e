"""Building-level aggregation of pixel damage.

Pixels are coarse relative to most building footprints, so a building is
marked damaged only when nearly all of its footprint area lies inside
damage-flagged pixels. Counts roll up into per-region cumulative series and
rate-change statistics between time windows.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import date
from typing import Optional, Sequence

import numpy as np

from .errors import AccountingError, UndefinedRateError
from .geometry import Point, bounding_box, polygon_area, rect_overlap_area
from .raster import MaskGrid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BuildingFootprint:
    """Simple polygon outline of one building in the working CRS."""

    id: str
    polygon: tuple[Point, ...]
    region_id: str
    area_m2: float = field(default=0.0)

    def __post_init__(self):
        if len(self.polygon) < 3:
            raise ValueError(f"footprint {self.id}: polygon needs >= 3 vertices")
        if self.area_m2 <= 0:
            object.__setattr__(self, "area_m2", polygon_area(self.polygon))
        if self.area_m2 <= 0:
            raise ValueError(f"footprint {self.id}: degenerate polygon")


@dataclass(frozen=True)
class BuildingDamageFlag:
    """Damage verdict for one building."""

    id: str
    damaged: bool
    first_detected: Optional[date]
    coverage_fraction: float
    out_of_coverage: bool = False


@dataclass
class RegionSeries:
    """Cumulative damaged-building series for one region."""

    region_id: str
    dates: list[date]
    counts: list[int]
    percents: list[float]

    def count_at(self, when: date) -> int:
        """Cumulative count at a date (step function, 0 before the series)."""
        value = 0
        for d, c in zip(self.dates, self.counts):
            if d <= when:
                value = c
            else:
                break
        return value


def _pixel_cells(
    footprint: BuildingFootprint, mask: MaskGrid
) -> list[tuple[int, int, float]]:
    """(row, col, overlap_area) for grid cells the footprint overlaps."""
    meta = mask.meta
    xmin, ymin, xmax, ymax = bounding_box(footprint.polygon)
    row0, col0 = meta.point_to_pixel(xmin, ymax)
    row1, col1 = meta.point_to_pixel(xmax, ymin)
    cells = []
    for row in range(max(row0, 0), min(row1, meta.height - 1) + 1):
        for col in range(max(col0, 0), min(col1, meta.width - 1) + 1):
            cxmin, cymin, cxmax, cymax = meta.pixel_bounds(row, col)
            area = rect_overlap_area(footprint.polygon, cxmin, cymin, cxmax, cymax)
            if area > 0.0:
                cells.append((row, col, area))
    return cells


def mark_buildings(
    footprints: Sequence[BuildingFootprint],
    cumulative: MaskGrid,
    first_dates: np.ndarray,
    coverage_threshold: float = 0.99,
) -> list[BuildingDamageFlag]:
    """Flag buildings whose area is covered by damaged pixels.

    coverage_fraction is the share of footprint area inside flagged pixels;
    damaged iff fraction >= coverage_threshold. first_detected is the
    earliest per-pixel first-detection date among overlapped flagged pixels.
    Footprints that overlap no grid cell are marked out-of-coverage.
    """
    flags = []
    for fp in footprints:
        cells = _pixel_cells(fp, cumulative)
        if not cells:
            flags.append(BuildingDamageFlag(
                id=fp.id, damaged=False, first_detected=None,
                coverage_fraction=0.0, out_of_coverage=True,
            ))
            continue
        flagged_area = 0.0
        earliest = 0
        for row, col, area in cells:
            if cumulative.values[row, col] == 1:
                flagged_area += area
                ordinal = int(first_dates[row, col])
                if ordinal > 0 and (earliest == 0 or ordinal < earliest):
                    earliest = ordinal
        fraction = min(flagged_area / fp.area_m2, 1.0)
        damaged = fraction >= coverage_threshold
        flags.append(BuildingDamageFlag(
            id=fp.id,
            damaged=damaged,
            first_detected=date.fromordinal(earliest) if damaged and earliest else None,
            coverage_fraction=fraction,
        ))
    return flags


def validly_monitored(
    footprints: Sequence[BuildingFootprint],
    valid_masks: Sequence[MaskGrid],
    min_surveys: int = 2,
) -> set[str]:
    """Buildings overlapping at least one valid pixel in >= min_surveys timesteps."""
    ids = set()
    for fp in footprints:
        surveys = 0
        for mask in valid_masks:
            cells = _pixel_cells(fp, mask)
            if any(mask.values[row, col] == 1 for row, col, _ in cells):
                surveys += 1
                if surveys >= min_surveys:
                    ids.add(fp.id)
                    break
    return ids


TOTAL_REGION = "total"


def damage_percent(count: int, total: int) -> float:
    """Share of a region's monitored buildings marked damaged, in percent."""
    if count < 0 or total < 0:
        raise AccountingError("counts must be nonnegative")
    if count > total:
        raise AccountingError(f"damaged count {count} exceeds total {total}")
    return 100.0 * count / total if total else 0.0


def region_timeseries(
    flags: Sequence[BuildingDamageFlag],
    footprints: Sequence[BuildingFootprint],
    dates: Sequence[date],
) -> list[RegionSeries]:
    """Cumulative damaged counts and percentages per region and overall.

    Out-of-coverage buildings are excluded from denominators. The returned
    list ends with an AOI-wide series under region_id "total".
    """
    regions = {fp.id: fp.region_id for fp in footprints}
    out_of_coverage = {f.id for f in flags if f.out_of_coverage}
    totals: dict[str, int] = {}
    for fp in footprints:
        if fp.id not in out_of_coverage:
            totals[fp.region_id] = totals.get(fp.region_id, 0) + 1

    damage_dates: dict[str, list[date]] = {r: [] for r in totals}
    for flag in flags:
        if not flag.damaged or flag.id in out_of_coverage:
            continue
        if flag.id not in regions:
            raise AccountingError(f"building {flag.id} has no footprint region")
        if flag.first_detected is None:
            raise AccountingError(f"damaged building {flag.id} has no detection date")
        damage_dates[regions[flag.id]].append(flag.first_detected)

    ordered = sorted(dates)
    series = []
    for region in sorted(totals):
        counts = [sum(1 for d in damage_dates[region] if d <= t) for t in ordered]
        percents = [damage_percent(c, totals[region]) for c in counts]
        series.append(RegionSeries(region, list(ordered), counts, percents))

    grand_total = sum(totals.values())
    all_counts = [sum(s.counts[i] for s in series) for i in range(len(ordered))]
    series.append(RegionSeries(
        TOTAL_REGION,
        list(ordered),
        all_counts,
        [damage_percent(c, grand_total) for c in all_counts],
    ))
    return series


def rate_change(
    series: RegionSeries,
    window_a: tuple[date, date],
    window_b: tuple[date, date],
) -> float:
    """Percent decrease in daily detection rate from window_a to window_b."""
    for name, (start, end) in (("window_a", window_a), ("window_b", window_b)):
        if end <= start:
            raise ValueError(f"{name} must span at least one day")
    if not (window_a[1] <= window_b[0] or window_b[1] <= window_a[0]):
        raise ValueError("windows must not overlap")

    def rate(window: tuple[date, date]) -> float:
        days = (window[1] - window[0]).days
        return (series.count_at(window[1]) - series.count_at(window[0])) / days

    rate_a = rate(window_a)
    if rate_a == 0:
        raise UndefinedRateError("baseline window has zero detection rate")
    return 100.0 * (1.0 - rate(window_b) / rate_a)


def load_footprints(path) -> list[BuildingFootprint]:
    """Read footprints from GeoJSON polygons with properties id, region_id."""
    with open(path) as fh:
        collection = json.load(fh)
    footprints = []
    for feature in collection["features"]:
        geom = feature["geometry"]
        if geom["type"] != "Polygon":
            raise ValueError(f"unsupported geometry type {geom['type']}")
        ring = [tuple(pt) for pt in geom["coordinates"][0]]
        if len(ring) > 1 and ring[0] == ring[-1]:
            ring = ring[:-1]
        props = feature["properties"]
        footprints.append(BuildingFootprint(
            id=str(props["id"]),
            polygon=tuple(ring),
            region_id=str(props["region_id"]),
        ))
    return footprints


def save_flags(
    flags: Sequence[BuildingDamageFlag],
    footprints: Sequence[BuildingFootprint],
    path,
) -> None:
    """Write damage flags as GeoJSON alongside the footprint polygons."""
    outlines = {fp.id: fp for fp in footprints}
    features = []
    for flag in sorted(flags, key=lambda f: f.id):
        fp = outlines[flag.id]
        ring = list(fp.polygon) + [fp.polygon[0]]
        features.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [[list(pt) for pt in ring]]},
            "properties": {
                "id": flag.id,
                "region_id": fp.region_id,
                "damaged": flag.damaged,
                "first_detected": flag.first_detected.isoformat() if flag.first_detected else None,
                "coverage_fraction": round(flag.coverage_fraction, 6),
            },
        })
    with open(path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, indent=2)
        fh.write("\n")


def save_series(series: Sequence[RegionSeries], path) -> None:
    """CSV with columns region_id,date,count,percent."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region_id", "date", "count", "percent"])
        for s in series:
            for d, c, p in zip(s.dates, s.counts, s.percents):
                writer.writerow([s.region_id, d.isoformat(), c, f"{p:.4f}"])


def load_series(path) -> list[RegionSeries]:
    rows: dict[str, RegionSeries] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            s = rows.setdefault(
                row["region_id"], RegionSeries(row["region_id"], [], [], [])
            )
            s.dates.append(date.fromisoformat(row["date"]))
            s.counts.append(int(row["count"]))
            s.percents.append(float(row["percent"]))
    return list(rows.values())
