"""Synthetic catalogs and coherence scenes with known ground truth.

The scene model is deliberately simple: per-class exponential decay of
coherence toward a long-term floor, a multiplicative seasonal dip, a linear
perpendicular-baseline penalty, and additive Gaussian noise. Pairs whose
acquisition interval spans a pixel's damage date collapse to the noise
floor. None of this aims at physical fidelity; it exists to exercise the
pipeline's assumptions with a scene whose truth is known exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import Optional, Sequence

import numpy as np

from .catalog import (
    Acquisition,
    Catalog,
    EpochConfig,
    StackPlan,
    TimestepPlans,
    conflict_references,
    plan_timestep,
)
from .detect import DetectionGrid, DetectorConfig, classify_damage, compute_valid_mask
from .errors import AlignmentError, CatalogError
from .raster import CoherenceGrid, GridMeta, MaskGrid
from .reduce import StackSummary, reduce_stack

CLASS_NAMES = {"u": "urban", "v": "vegetated", "a": "agricultural"}


@dataclass(frozen=True)
class ClassParams:
    """Coherence model parameters for one land-cover class."""

    gamma_base: float
    gamma_floor: float
    tau_days: float
    season_amplitude: float
    noise_sigma: float

    def __post_init__(self):
        for name in ("gamma_base", "gamma_floor"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")
        if self.tau_days <= 0:
            raise ValueError(f"tau_days must be positive, got {self.tau_days}")
        if self.noise_sigma < 0 or self.season_amplitude < 0:
            raise ValueError("noise_sigma and season_amplitude must be >= 0")


DEFAULT_PARAMS = {
    "u": ClassParams(0.80, 0.20, 2000.0, 0.00, 0.03),
    "v": ClassParams(0.45, 0.10, 300.0, 0.30, 0.12),
    "a": ClassParams(0.55, 0.15, 600.0, 0.25, 0.08),
}


@dataclass
class SceneSpec:
    """Full description of a synthetic scene; JSON-serializable."""

    width: int
    height: int
    classes: list[str]                      # one string of u/v/a codes per row
    damage: list[tuple[int, int, date]]     # (row, col, event date)
    seed: int
    params: dict[str, ClassParams] = field(default_factory=lambda: dict(DEFAULT_PARAMS))
    bperp_coeff: float = 0.0005             # fractional coherence loss per meter
    season_onset_doy: int = 91

    def __post_init__(self):
        if len(self.classes) != self.height:
            raise ValueError("class map row count does not match height")
        for row in self.classes:
            if len(row) != self.width:
                raise ValueError("class map row width does not match width")
            unknown = set(row) - set(CLASS_NAMES)
            if unknown:
                raise ValueError(f"unknown class codes {sorted(unknown)}")

    def class_map(self) -> np.ndarray:
        return np.array([list(row) for row in self.classes], dtype="U1")

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "classes": self.classes,
            "damage": [[r, c, d.isoformat()] for r, c, d in self.damage],
            "seed": self.seed,
            "params": {
                code: vars(p).copy() for code, p in self.params.items()
            },
            "bperp_coeff": self.bperp_coeff,
            "season_onset_doy": self.season_onset_doy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            width=d["width"],
            height=d["height"],
            classes=list(d["classes"]),
            damage=[(r, c, date.fromisoformat(s)) for r, c, s in d["damage"]],
            seed=d["seed"],
            params={code: ClassParams(**p) for code, p in d["params"].items()},
            bperp_coeff=d["bperp_coeff"],
            season_onset_doy=d["season_onset_doy"],
        )


@dataclass
class SceneTruth:
    """Ground truth derived from a SceneSpec."""

    meta: GridMeta
    classes: np.ndarray          # U1 class codes
    damage_ordinals: np.ndarray  # int64 proleptic ordinals, 0 = never damaged
    expected_valid: np.ndarray   # bool, pixels whose simulated pre-epoch std passes

    def damaged_by(self, when: Optional[date] = None) -> np.ndarray:
        """Boolean truth map of pixels damaged on or before ``when``."""
        damaged = self.damage_ordinals > 0
        if when is not None:
            damaged &= self.damage_ordinals <= when.toordinal()
        return damaged


def scene_meta(spec: SceneSpec) -> GridMeta:
    return GridMeta(
        crs=32636,
        origin_x=100000.0,
        origin_y=200000.0,
        width=spec.width,
        height=spec.height,
    )


def _season_factor(day: date, amplitude: float, onset_doy: int) -> float:
    if amplitude == 0.0:
        return 1.0
    doy = day.timetuple().tm_yday
    return 1.0 - amplitude * max(0.0, math.sin(2.0 * math.pi * (doy - onset_doy) / 365.0))


def _pair_rng(seed: int, reference: str, secondary: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{reference}|{secondary}".encode()).digest()
    key = int.from_bytes(digest[:8], "big")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


def _pair_grid(
    spec: SceneSpec,
    meta: GridMeta,
    ref: Acquisition,
    sec: Acquisition,
    codes: np.ndarray,
    damage_ordinals: np.ndarray,
) -> CoherenceGrid:
    dt = abs((ref.day - sec.day).days)
    bperp = abs(ref.cross_track_position - sec.cross_track_position)
    bfactor = max(0.0, 1.0 - spec.bperp_coeff * bperp)
    clean = np.empty((spec.height, spec.width), dtype=np.float64)
    sigma = np.empty_like(clean)
    floor = np.empty_like(clean)
    for code, p in spec.params.items():
        chosen = codes == code
        if not chosen.any():
            continue
        season = _season_factor(sec.day, p.season_amplitude, spec.season_onset_doy)
        value = p.gamma_floor + (p.gamma_base - p.gamma_floor) * math.exp(-dt / p.tau_days) * season * bfactor
        clean[chosen] = value
        sigma[chosen] = p.noise_sigma
        floor[chosen] = p.gamma_floor

    lo, hi = sorted((ref.day.toordinal(), sec.day.toordinal()))
    spans = (damage_ordinals > lo) & (damage_ordinals <= hi)
    clean = np.where(spans, floor, clean)

    rng = _pair_rng(spec.seed, ref.id, sec.id)
    values = clean + rng.standard_normal(clean.shape) * sigma
    np.clip(values, 0.0, 1.0, out=values)
    return CoherenceGrid(meta=meta, values=values.astype(np.float32))


def generate_plan_grids(
    spec: SceneSpec,
    plan: StackPlan,
    catalog: Catalog,
) -> list[tuple[str, str, CoherenceGrid]]:
    """Simulate every pair of one stack plan; (ref id, sec id, grid) triples."""
    meta = scene_meta(spec)
    codes = spec.class_map()
    damage = _damage_map(spec)
    out = []
    for pair in plan.pairs:
        ref = catalog.get(pair.reference)
        sec = catalog.get(pair.secondary)
        out.append((ref.id, sec.id, _pair_grid(spec, meta, ref, sec, codes, damage)))
    return out


def _damage_map(spec: SceneSpec) -> np.ndarray:
    damage = np.zeros((spec.height, spec.width), dtype=np.int64)
    for row, col, when in spec.damage:
        damage[row, col] = when.toordinal()
    return damage


def _expected_valid(
    spec: SceneSpec,
    pre_grids: Sequence[CoherenceGrid],
    cfg: DetectorConfig,
) -> np.ndarray:
    stack = np.stack([g.values.astype(np.float64) for g in pre_grids])
    count = np.sum(~np.isnan(stack), axis=0)
    with np.errstate(invalid="ignore"):
        std = np.nanstd(stack, axis=0)
    sigma_limit = cfg.k / cfg.z_threshold
    return (count >= 2) & (np.maximum(std, cfg.sigma_floor) <= sigma_limit)


def build_truth(
    spec: SceneSpec,
    pre_grids: Optional[Sequence[CoherenceGrid]] = None,
    detector_cfg: DetectorConfig = DetectorConfig(),
) -> SceneTruth:
    """Assemble the SceneTruth; expected-valid needs simulated pre grids."""
    expected_valid = (
        _expected_valid(spec, pre_grids, detector_cfg)
        if pre_grids
        else np.zeros((spec.height, spec.width), dtype=bool)
    )
    return SceneTruth(
        meta=scene_meta(spec),
        classes=spec.class_map(),
        damage_ordinals=_damage_map(spec),
        expected_valid=expected_valid,
    )


def generate_scene(
    spec: SceneSpec,
    plans: Sequence[StackPlan],
    catalog: Catalog,
    detector_cfg: DetectorConfig = DetectorConfig(),
) -> tuple[SceneTruth, dict[tuple[str, date], list[tuple[str, str, CoherenceGrid]]]]:
    """Simulate coherence grids for the given plans.

    Returns the scene truth and grids keyed by (epoch, timestep date). The
    expected-valid map is derived from the first pre-epoch plan given; it is
    all-False when no pre plan is present. Identical (spec, plans) inputs
    reproduce bit-identical grids.
    """
    for plan in plans:
        for pair in plan.pairs:
            for acq_id in (pair.reference, pair.secondary):
                catalog.get(acq_id)  # raises CatalogError on unknown ids

    grids: dict[tuple[str, date], list[tuple[str, str, CoherenceGrid]]] = {}
    pre_grids: Optional[list[CoherenceGrid]] = None
    for plan in plans:
        triples = generate_plan_grids(spec, plan, catalog)
        grids[(plan.epoch, plan.timestep_date)] = triples
        if plan.epoch == "pre" and pre_grids is None:
            pre_grids = [g for _, _, g in triples]

    truth = build_truth(spec, pre_grids, detector_cfg)
    return truth, grids


def score_against_truth(
    cumulative: MaskGrid,
    truth: SceneTruth,
    through: Optional[date] = None,
) -> dict[str, float]:
    """Oracle confusion counts over expected-valid pixels."""
    if cumulative.values.shape != truth.damage_ordinals.shape:
        raise AlignmentError(
            f"detection grid {cumulative.values.shape} does not match "
            f"truth {truth.damage_ordinals.shape}"
        )
    scope = truth.expected_valid
    detected = (cumulative.values == 1) & scope
    damaged = truth.damaged_by(through) & scope
    tp = int(np.sum(detected & damaged))
    fp = int(np.sum(detected & ~damaged))
    fn = int(np.sum(~detected & damaged & scope))
    tn = int(np.sum(~detected & ~damaged & scope))
    return {
        "tp": tp, "fp": fp, "fn": fn, "tn": tn,
        "tpr": tp / (tp + fn) if tp + fn else 0.0,
        "fpr": fp / (fp + tn) if fp + tn else 0.0,
    }


def save_scene_spec(spec: SceneSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")


def load_scene_spec(path) -> SceneSpec:
    with open(path) as fh:
        return SceneSpec.from_dict(json.load(fh))


def lattice_catalog(
    start: date = date(2020, 1, 6),
    end: date = date(2024, 10, 31),
    step_days: int = 12,
    orbit_path: int = 87,
    direction: str = "descending",
    jitter: Optional[Sequence[int]] = None,
    dropout: Optional[Sequence[bool]] = None,
) -> Catalog:
    """Regular revisit catalog, optionally with per-slot date jitter and gaps."""
    acqs = []
    day = start
    i = 0
    while day <= end:
        keep = dropout[i % len(dropout)] if dropout else True
        offset = jitter[i % len(jitter)] if jitter else 0
        if keep:
            when = day + timedelta(days=int(offset))
            acqs.append(Acquisition(
                id=f"S1_{i:04d}",
                acquired_at=datetime(when.year, when.month, when.day, 15, 32),
                orbit_path=orbit_path,
                direction=direction,
                cross_track_position=round(120.0 * math.sin(0.7 * i), 1),
            ))
        day += timedelta(days=step_days)
        i += 1
    return Catalog(acqs)


def standard_epochs() -> EpochConfig:
    return EpochConfig(
        conflict_window=(date(2023, 10, 12), date(2024, 10, 31)),
        pre_window=(date(2020, 6, 1), date(2023, 10, 6)),
        war_onset=date(2023, 10, 7),
    )


def random_catalog(rng: np.random.Generator) -> tuple[Catalog, EpochConfig]:
    """Perturbed lattice catalog for planning property tests."""
    start = date(2020, 1, 6) + timedelta(days=int(rng.integers(-45, 46)))
    n_slots = 160
    jitter = rng.integers(-2, 3, size=n_slots).tolist()
    dropout = (rng.random(n_slots) > 0.08).tolist()
    catalog = lattice_catalog(start=start, jitter=jitter, dropout=dropout)
    return catalog, standard_epochs()


def standard_scene(seed: int = 20231007, width: int = 256, height: int = 256) -> SceneSpec:
    """The seeded test scene: 2/3 urban, vegetated/agricultural margins,
    5% of pixels damaged (urban only), events spread over early timesteps.
    """
    urban_cols = (2 * width) // 3
    rows = []
    for r in range(height):
        margin = "v" if r < height // 2 else "a"
        rows.append("u" * urban_cols + margin * (width - urban_cols))

    epochs = standard_epochs()
    catalog = lattice_catalog()
    refs = conflict_references(catalog, epochs)
    # leave the final two timesteps event-free so every event can reconfirm
    event_dates = [a.day - timedelta(days=5) for a in refs[: max(1, len(refs) - 2)]]
    event_dates = event_dates[:20]

    n_damaged = round(0.05 * width * height)
    rng = np.random.default_rng(seed)
    flat = rng.choice(height * urban_cols, size=n_damaged, replace=False)
    damage = []
    for k, idx in enumerate(sorted(flat.tolist())):
        row, col = divmod(idx, urban_cols)
        damage.append((row, col, event_dates[k % len(event_dates)]))
    return SceneSpec(
        width=width,
        height=height,
        classes=rows,
        damage=damage,
        seed=seed,
    )


@dataclass
class SimulationResult:
    """Everything the scoring stages need from one simulated run."""

    truth: SceneTruth
    plans: list[TimestepPlans]
    conflict_detections: list[DetectionGrid]
    counterfactual_detections: list[DetectionGrid]
    valid: MaskGrid
    last_pre: StackSummary
    last_conflict: StackSummary
    last_counterfactual: StackSummary


def simulate_run(
    spec: SceneSpec,
    catalog: Catalog,
    epochs: EpochConfig,
    detector_cfg: DetectorConfig = DetectorConfig(),
    max_timesteps: Optional[int] = None,
    min_pairs: int = 15,
) -> SimulationResult:
    """Plan, simulate, reduce, and classify every monitoring timestep in memory.

    The validity mask comes from the first timestep's pre-epoch summary; the
    truth's expected-valid map is derived from the same plan.
    """
    refs = conflict_references(catalog, epochs)
    if max_timesteps is not None:
        refs = refs[:max_timesteps]
    if not refs:
        raise CatalogError("catalog has no acquisitions inside the conflict window")

    truth: Optional[SceneTruth] = None
    valid: Optional[MaskGrid] = None
    plans = []
    conflict_detections = []
    cf_detections = []
    last = {}
    for ref in refs:
        triple = plan_timestep(catalog, ref, epochs, min_pairs=min_pairs)
        plans.append(triple)
        summaries = {}
        for plan in triple:
            triples = generate_plan_grids(spec, plan, catalog)
            grids = [g for _, _, g in triples]
            summaries[plan.epoch] = reduce_stack(
                grids, min_count=min_pairs, epoch=plan.epoch,
                timestep_date=plan.timestep_date,
            )
            if truth is None and plan.epoch == "pre":
                truth = build_truth(spec, grids, detector_cfg)
        if valid is None:
            valid = compute_valid_mask(summaries["pre"], detector_cfg)
        conflict_detections.append(
            classify_damage(summaries["conflict"], summaries["pre"], detector_cfg)
        )
        cf_detections.append(
            classify_damage(summaries["counterfactual"], summaries["pre"], detector_cfg)
        )
        last = summaries
    return SimulationResult(
        truth=truth,
        plans=plans,
        conflict_detections=conflict_detections,
        counterfactual_detections=cf_detections,
        valid=valid,
        last_pre=last["pre"],
        last_conflict=last["conflict"],
        last_counterfactual=last["counterfactual"],
    )


def synthetic_footprints(truth: SceneTruth, every: int = 4, size_m: float = 20.0):
    """Square building footprints centered on a subsampled pixel lattice.

    Buildings sit only on urban pixels; the region split is west/east of the
    grid midline. Import cycle note: returns aggregate.BuildingFootprint.
    """
    from .aggregate import BuildingFootprint

    meta = truth.meta
    half = size_m / 2.0
    footprints = []
    for row in range(every // 2, meta.height, every):
        for col in range(every // 2, meta.width, every):
            if truth.classes[row, col] != "u":
                continue
            x0, y0, x1, y1 = meta.pixel_bounds(row, col)
            cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
            region = "west" if col < meta.width // 2 else "east"
            footprints.append(BuildingFootprint(
                id=f"b{row:03d}_{col:03d}",
                polygon=(
                    (cx - half, cy - half),
                    (cx + half, cy - half),
                    (cx + half, cy + half),
                    (cx - half, cy + half),
                ),
                region_id=region,
            ))
    return footprints


def synthetic_points(
    truth: SceneTruth,
    survey_date: date,
    count: int,
    seed: int = 7,
):
    """Reference survey points at centers of truth-damaged pixels."""
    from .evaluate import LABELS, ReferencePoint

    meta = truth.meta
    damaged = truth.damaged_by(survey_date) & truth.expected_valid
    rows, cols = np.nonzero(damaged)
    if rows.size == 0:
        return []
    rng = np.random.default_rng(seed)
    chosen = rng.choice(rows.size, size=min(count, rows.size), replace=False)
    points = []
    for idx in sorted(chosen.tolist()):
        row, col = int(rows[idx]), int(cols[idx])
        x0, y0, x1, y1 = meta.pixel_bounds(row, col)
        points.append(ReferencePoint(
            location=((x0 + x1) / 2.0, (y0 + y1) / 2.0),
            survey_date=survey_date,
            label=LABELS[int(rng.integers(0, len(LABELS)))],
        ))
    return points
