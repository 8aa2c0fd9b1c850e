"""Agreement scoring against point-labeled reference surveys.

True positives and false negatives come from the conflict epoch; false
positives and true negatives come from rerunning the detector on a
counterfactual epoch over the same points, where any detection is spurious
by construction. Distribution-stability diagnostics use the Hellinger
distance between mean-coherence histograms over a pseudo-stable region.
"""

from __future__ import annotations

import json
import csv
import logging
from dataclasses import dataclass
from datetime import date
from typing import Optional, Sequence

import numpy as np

from .aggregate import BuildingDamageFlag, BuildingFootprint
from .detect import DetectionGrid, accumulate_damage
from .errors import BinningError, EmptyRegionError, EmptyReportError
from .geometry import point_in_polygon
from .raster import MaskGrid
from .reduce import StackSummary

log = logging.getLogger(__name__)

LABELS = ("destroyed", "severe", "moderate", "possible")

HIT = "hit"
MISS = "miss"
OUT_OF_VALID = "out-of-valid"
OUT_OF_COVERAGE = "out-of-coverage"

SCOPE_VALID_ONLY = "valid-only"
SCOPE_ALL = "all"


@dataclass(frozen=True)
class ReferencePoint:
    """One surveyed damage location."""

    location: tuple[float, float]
    survey_date: date
    label: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")


@dataclass(frozen=True)
class AgreementReport:
    """Confusion counts and derived agreement metrics for one survey."""

    survey_date: date
    tp: int
    tn: int
    fp: int
    fn: int
    agreement: float
    tpr: float
    fpr: float
    f1: float
    csi: float
    scope: str
    total_locations: int


@dataclass(frozen=True)
class StabilityReport:
    """Distribution drift of mean coherence over a pseudo-stable region."""

    timestep_date: Optional[date]
    hellinger: float
    mean_offset: float


def accumulate_with_grace(
    detections: Sequence[DetectionGrid],
    survey_date: date,
    grace_steps: int = 9,
) -> MaskGrid:
    """OR of flags through the survey date plus the next grace_steps timesteps."""
    later = sorted(d.timestep_date for d in detections if d.timestep_date > survey_date)
    through = later[grace_steps - 1] if 0 < grace_steps <= len(later) else (
        later[-1] if later and grace_steps > 0 else survey_date
    )
    return accumulate_damage(detections, through=through)


def match_points(
    points: Sequence[ReferencePoint],
    cumulative: MaskGrid,
    valid: MaskGrid,
    scope: str = SCOPE_VALID_ONLY,
) -> list[str]:
    """Match each point to its containing pixel's damage flag.

    All severity labels collapse to a single damage class. scope=valid-only
    drops points whose pixel fails the validity rule; unobserved pixels and
    points off the grid tally as out-of-coverage either way.
    """
    if scope not in (SCOPE_VALID_ONLY, SCOPE_ALL):
        raise ValueError(f"unknown scope {scope!r}")
    outcomes = []
    for point in points:
        x, y = point.location
        if not cumulative.meta.contains_point(x, y):
            outcomes.append(OUT_OF_COVERAGE)
            continue
        row, col = cumulative.meta.point_to_pixel(x, y)
        if scope == SCOPE_VALID_ONLY and valid.values[row, col] != 1:
            outcomes.append(OUT_OF_VALID)
            continue
        flag = cumulative.values[row, col]
        if flag == 1:
            outcomes.append(HIT)
        elif flag == 0:
            outcomes.append(MISS)
        else:
            outcomes.append(OUT_OF_COVERAGE)
    return outcomes


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def f1_from_rates(tpr: float, fpr: float) -> float:
    """F1 from the detection rate and false-positive rate, both fractions.

    Uses (1 - fpr) in place of precision: counterfactual points stand in
    for negatives, so precision is not directly observable.
    """
    if not 0.0 <= tpr <= 1.0 or not 0.0 <= fpr <= 1.0:
        raise ValueError("rates must lie in [0, 1]")
    den = tpr + (1.0 - fpr)
    if den == 0.0:
        return 0.0
    return 2.0 * tpr * (1.0 - fpr) / den


def agreement_metrics(
    conflict_outcomes: Sequence[str],
    counterfactual_outcomes: Sequence[str],
    survey_date: date,
    scope: str = SCOPE_VALID_ONLY,
) -> AgreementReport:
    """Confusion counts from epoch outcomes scored on one point set.

    Conflict hits/misses are TP/FN; counterfactual hits/misses are FP/TN.
    Each epoch is tallied independently, so a point excluded in one epoch
    (out of valid or out of coverage) can still count in the other.
    """
    if len(conflict_outcomes) != len(counterfactual_outcomes):
        raise ValueError("epoch outcome lists must cover the same points")
    tp = sum(o == HIT for o in conflict_outcomes)
    fn = sum(o == MISS for o in conflict_outcomes)
    fp = sum(o == HIT for o in counterfactual_outcomes)
    tn = sum(o == MISS for o in counterfactual_outcomes)
    total = tp + tn + fp + fn
    if total == 0:
        raise EmptyReportError("no points scored in both epochs")
    tpr = _ratio(tp, tp + fn)
    fpr = _ratio(fp, fp + tn)
    f1 = f1_from_rates(tpr, fpr)
    return AgreementReport(
        survey_date=survey_date,
        tp=tp, tn=tn, fp=fp, fn=fn,
        agreement=100.0 * (tp + tn) / total,
        tpr=100.0 * tpr,
        fpr=100.0 * fpr,
        f1=100.0 * f1,
        csi=100.0 * _ratio(tp, tp + fp + fn),
        scope=scope,
        total_locations=tp + fn,
    )


def hellinger_distance(
    hist_p: np.ndarray,
    hist_q: np.ndarray,
    edges_p: Optional[np.ndarray] = None,
    edges_q: Optional[np.ndarray] = None,
) -> float:
    """H = sqrt(1 - sum_i sqrt(p_i * q_i)) over matching bins."""
    p = np.asarray(hist_p, dtype=np.float64)
    q = np.asarray(hist_q, dtype=np.float64)
    if p.shape != q.shape:
        raise BinningError(f"histogram sizes differ: {p.shape} vs {q.shape}")
    if edges_p is not None and edges_q is not None and not np.array_equal(edges_p, edges_q):
        raise BinningError("histogram bin edges differ")
    for name, h in (("p", p), ("q", q)):
        total = h.sum()
        if total <= 0:
            raise BinningError(f"histogram {name} has no mass")
        if not np.isclose(total, 1.0, atol=1e-9):
            log.warning("histogram %s sums to %.6f, renormalizing", name, total)
    p = p / p.sum()
    q = q / q.sum()
    if np.array_equal(p, q):
        # identical distributions are exactly coincident; don't let the
        # bin sum's rounding residue surface as a tiny positive distance
        return 0.0
    return float(np.sqrt(max(0.0, 1.0 - np.sum(np.sqrt(p * q)))))


def stability_report(
    region: MaskGrid,
    conflict: StackSummary,
    pre: StackSummary,
    bins: int = 100,
) -> StabilityReport:
    """Hellinger distance and mean offset of in-region mean coherence."""
    chosen = region.values == 1
    if not chosen.any():
        raise EmptyRegionError("stability region selects no pixels")
    edges = np.linspace(0.0, 1.0, bins + 1)
    samples = []
    for summary in (conflict, pre):
        vals = summary.mean[chosen]
        vals = vals[~np.isnan(vals)]
        if vals.size == 0:
            raise EmptyRegionError("stability region has no defined pixels")
        samples.append(vals.astype(np.float64))
    hist_c, _ = np.histogram(samples[0], bins=edges)
    hist_p, _ = np.histogram(samples[1], bins=edges)
    h = hellinger_distance(hist_c / hist_c.sum(), hist_p / hist_p.sum(), edges, edges)
    return StabilityReport(
        timestep_date=conflict.timestep_date,
        hellinger=h,
        mean_offset=float(samples[0].mean() - samples[1].mean()),
    )


def merge_sources(
    ccd_flags: Sequence[BuildingDamageFlag],
    points: Sequence[ReferencePoint],
    footprints: Sequence[BuildingFootprint],
) -> tuple[int, dict[str, str]]:
    """Union of CCD-damaged buildings and buildings containing reference points.

    Returns (union count, building id -> provenance) with provenance one of
    ccd-only, reference-only, both. Points falling in no footprint are ignored.
    """
    ccd_damaged = {f.id for f in ccd_flags if f.damaged}
    referenced: set[str] = set()
    for point in points:
        for fp in footprints:
            if point_in_polygon(point.location, fp.polygon):
                referenced.add(fp.id)
                break
    provenance = {}
    for bid in ccd_damaged | referenced:
        if bid in ccd_damaged and bid in referenced:
            provenance[bid] = "both"
        elif bid in ccd_damaged:
            provenance[bid] = "ccd-only"
        else:
            provenance[bid] = "reference-only"
    return len(provenance), provenance


def load_points(path) -> list[ReferencePoint]:
    """Read reference points from GeoJSON with properties label, survey_date."""
    with open(path) as fh:
        collection = json.load(fh)
    points = []
    for feature in collection["features"]:
        geom = feature["geometry"]
        if geom["type"] != "Point":
            raise ValueError(f"unsupported geometry type {geom['type']}")
        props = feature["properties"]
        points.append(ReferencePoint(
            location=tuple(geom["coordinates"]),
            survey_date=date.fromisoformat(props["survey_date"]),
            label=props["label"],
        ))
    return points


def save_agreement_reports(reports: Sequence[AgreementReport], path) -> None:
    """CSV with columns image_date,agreement,tpr,fpr,f1,csi,total_locations."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_date", "agreement", "tpr", "fpr", "f1", "csi", "total_locations"])
        for r in sorted(reports, key=lambda r: r.survey_date):
            writer.writerow([
                r.survey_date.isoformat(),
                f"{r.agreement:.2f}", f"{r.tpr:.2f}", f"{r.fpr:.2f}",
                f"{r.f1:.2f}", f"{r.csi:.2f}", r.total_locations,
            ])
