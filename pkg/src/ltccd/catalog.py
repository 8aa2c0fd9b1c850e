"""Acquisition archive and baseline-matched stack planning.

Monitoring is organized around three epochs: the event (conflict) window,
a pre-event baseline roughly one year earlier, and a counterfactual window
shifted a fixed number of months before the event. Every stack uses a single
reference image and only secondaries acquired before the event onset; the
pre and counterfactual stacks are built to match the conflict stack's
multiset of absolute temporal baselines so that temporal decay affects all
epochs identically.
"""

from __future__ import annotations

import calendar
import csv
import warnings
from bisect import bisect_left
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from typing import Iterable, Iterator, Optional

from .errors import (
    CatalogError,
    DegradedMatchWarning,
    InsufficientStackError,
    NoReferenceError,
    PairingError,
)

ASCENDING = "ascending"
DESCENDING = "descending"

CSV_HEADER = ["id", "acquired_at", "orbit_path", "direction", "cross_track_position_m"]


@dataclass(frozen=True)
class Acquisition:
    """One catalog entry: a SAR scene with its orbital context."""

    id: str
    acquired_at: datetime
    orbit_path: int
    direction: str
    cross_track_position: float  # meters within the orbital tube, vs track nominal

    def __post_init__(self):
        if self.direction not in (ASCENDING, DESCENDING):
            raise ValueError(f"direction must be ascending/descending, got {self.direction!r}")

    @property
    def day(self) -> date:
        return self.acquired_at.date()


@dataclass(frozen=True)
class InsarPair:
    """Reference/secondary pairing with signed baselines (reference minus secondary)."""

    reference: str
    secondary: str
    temporal_baseline: int        # whole days
    perpendicular_baseline: float  # meters

    def to_dict(self) -> dict:
        return {
            "reference": self.reference,
            "secondary": self.secondary,
            "temporal_baseline": self.temporal_baseline,
            "perpendicular_baseline": self.perpendicular_baseline,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InsarPair":
        return cls(
            reference=d["reference"],
            secondary=d["secondary"],
            temporal_baseline=int(d["temporal_baseline"]),
            perpendicular_baseline=float(d["perpendicular_baseline"]),
        )


def shift_months(day: date, months: int) -> date:
    """Shift a date by whole months, clamping the day to the target month's end."""
    index = day.year * 12 + (day.month - 1) + months
    year, month = divmod(index, 12)
    month += 1
    dom = min(day.day, calendar.monthrange(year, month)[1])
    return date(year, month, dom)


@dataclass(frozen=True)
class EpochConfig:
    """Monitoring windows around the event onset."""

    conflict_window: tuple[date, date]
    pre_window: tuple[date, date]
    war_onset: date
    counterfactual_shift: int = 24  # whole months

    def __post_init__(self):
        c0, c1 = self.conflict_window
        p0, p1 = self.pre_window
        if c0 > c1 or p0 > p1:
            raise ValueError("window start must not follow window end")
        if p1 >= self.war_onset:
            raise ValueError("pre_window must end before war_onset")
        if c0 < self.war_onset:
            raise ValueError("conflict_window must start on/after war_onset")
        cf0, cf1 = self.counterfactual_window
        if cf1 >= self.war_onset:
            raise ValueError("counterfactual window must fall entirely before war_onset")

    @property
    def counterfactual_window(self) -> tuple[date, date]:
        c0, c1 = self.conflict_window
        shift = -self.counterfactual_shift
        return shift_months(c0, shift), shift_months(c1, shift)

    def epoch_of(self, day: date) -> str:
        if self.conflict_window[0] <= day <= self.conflict_window[1]:
            return "conflict"
        cf0, cf1 = self.counterfactual_window
        if cf0 <= day <= cf1:
            return "counterfactual"
        return "pre"


@dataclass
class StackPlan:
    """One epoch's single-reference stack serving a monitoring timestep."""

    epoch: str
    reference: str
    pairs: list[InsarPair]
    timestep_date: date

    def abs_temporal_baselines(self) -> list[int]:
        return sorted(abs(p.temporal_baseline) for p in self.pairs)

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "reference": self.reference,
            "timestep_date": self.timestep_date.isoformat(),
            "pairs": [p.to_dict() for p in self.pairs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StackPlan":
        return cls(
            epoch=d["epoch"],
            reference=d["reference"],
            pairs=[InsarPair.from_dict(p) for p in d["pairs"]],
            timestep_date=date.fromisoformat(d["timestep_date"]),
        )


class Catalog:
    """Immutable acquisition archive keyed by id."""

    def __init__(self, acquisitions: Iterable[Acquisition]):
        acqs = sorted(acquisitions, key=lambda a: (a.acquired_at, a.id))
        by_id: dict[str, Acquisition] = {}
        for acq in acqs:
            if acq.id in by_id:
                raise CatalogError(f"duplicate acquisition id {acq.id!r}")
            by_id[acq.id] = acq
        self._acquisitions = acqs
        self._by_id = by_id

    def __len__(self) -> int:
        return len(self._acquisitions)

    def __iter__(self) -> Iterator[Acquisition]:
        return iter(self._acquisitions)

    def get(self, acq_id: str) -> Acquisition:
        try:
            return self._by_id[acq_id]
        except KeyError:
            raise CatalogError(f"unknown acquisition id {acq_id!r}") from None

    def same_track(self, like: Acquisition) -> list[Acquisition]:
        """All acquisitions sharing orbit path and direction, date-ordered."""
        return [
            a for a in self._acquisitions
            if a.orbit_path == like.orbit_path and a.direction == like.direction
        ]

    def in_window(self, like: Acquisition, start: date, end: date) -> list[Acquisition]:
        return [a for a in self.same_track(like) if start <= a.day <= end]

    @classmethod
    def from_csv(cls, path) -> "Catalog":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(CSV_HEADER) - set(reader.fieldnames or ())
            if missing:
                raise CatalogError(f"catalog CSV missing columns: {sorted(missing)}")
            acqs = [
                Acquisition(
                    id=row["id"],
                    acquired_at=datetime.fromisoformat(row["acquired_at"]),
                    orbit_path=int(row["orbit_path"]),
                    direction=row["direction"],
                    cross_track_position=float(row["cross_track_position_m"]),
                )
                for row in reader
            ]
        return cls(acqs)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for a in self._acquisitions:
                writer.writerow([
                    a.id,
                    a.acquired_at.isoformat(),
                    a.orbit_path,
                    a.direction,
                    repr(a.cross_track_position),
                ])


def pair_baselines(a: Acquisition, b: Acquisition) -> InsarPair:
    """Form an InSAR pair with reference ``a`` and secondary ``b``."""
    if a.orbit_path != b.orbit_path or a.direction != b.direction:
        raise PairingError(
            f"cannot pair {a.id} (track {a.orbit_path} {a.direction}) "
            f"with {b.id} (track {b.orbit_path} {b.direction})"
        )
    if a.id == b.id:
        raise PairingError(f"reference and secondary are the same acquisition: {a.id}")
    return InsarPair(
        reference=a.id,
        secondary=b.id,
        temporal_baseline=(a.day - b.day).days,
        perpendicular_baseline=a.cross_track_position - b.cross_track_position,
    )


def select_reference(
    catalog: Catalog,
    conflict_ref: Acquisition,
    epoch: EpochConfig,
    window_days: int = 30,
) -> Acquisition:
    """Pick the pre-event reference for one conflict acquisition.

    Candidates are same-track acquisitions within ±window_days of the
    one-year anniversary of the conflict acquisition, inside the pre window
    and before the event onset. The candidate with the smallest absolute
    perpendicular baseline wins; ties fall back to the smallest date offset
    from the anniversary, then lexicographic id.
    """
    anniversary = conflict_ref.day - timedelta(days=365)
    lo = anniversary - timedelta(days=window_days)
    hi = anniversary + timedelta(days=window_days)
    p0, p1 = epoch.pre_window
    candidates = [
        a for a in catalog.same_track(conflict_ref)
        if lo <= a.day <= hi
        and p0 <= a.day <= p1
        and a.day < epoch.war_onset
        and a.id != conflict_ref.id
    ]
    if not candidates:
        raise NoReferenceError(
            f"no pre-event reference within ±{window_days} days of {anniversary} "
            f"for {conflict_ref.id}"
        )
    return min(
        candidates,
        key=lambda a: (
            abs(a.cross_track_position - conflict_ref.cross_track_position),
            abs((a.day - anniversary).days),
            a.id,
        ),
    )


def plan_stack(
    catalog: Catalog,
    reference: Acquisition,
    epoch: EpochConfig,
    max_pairs: int = 25,
    min_pairs: int = 15,
    max_bperp_m: float = 250.0,
) -> StackPlan:
    """Build a single-reference stack plan from pre-event secondaries.

    Admissible secondaries share the reference's track, predate both the
    event onset and the reference, and sit within the perpendicular-baseline
    limit. If more than max_pairs are admissible, the most recent pre-event
    secondaries are kept (ties by smaller |B_perp|, then id).
    """
    cutoff = min(epoch.war_onset, reference.day)
    candidates = [
        a for a in catalog.same_track(reference)
        if a.day < cutoff
        and a.id != reference.id
        and abs(a.cross_track_position - reference.cross_track_position) <= max_bperp_m
    ]
    if len(candidates) < min_pairs:
        raise InsufficientStackError(
            f"only {len(candidates)} admissible secondaries for {reference.id}; "
            f"need at least {min_pairs}"
        )
    if len(candidates) > max_pairs:
        candidates = sorted(
            candidates,
            key=lambda a: (
                (epoch.war_onset - a.day).days,
                abs(a.cross_track_position - reference.cross_track_position),
                a.id,
            ),
        )[:max_pairs]
    pairs = sorted(
        (pair_baselines(reference, sec) for sec in candidates),
        key=lambda p: p.temporal_baseline,
        reverse=True,
    )
    return StackPlan(
        epoch=epoch.epoch_of(reference.day),
        reference=reference.id,
        pairs=pairs,
        timestep_date=reference.day,
    )


def _greedy_match(
    targets: list[int],
    candidates: list[tuple[int, Acquisition]],
    tolerance_days: int,
) -> tuple[list[tuple[int, Acquisition]], int]:
    """Greedy nearest assignment of |dt| targets onto candidates, each used once.

    Both sides are walked in ascending |dt| order; returns (assignments,
    unmatched count) where assignments pair each matched target with its
    candidate.
    """
    pool = sorted(candidates, key=lambda c: (c[0], c[1].id))
    pool_dts = [c[0] for c in pool]
    assigned: list[tuple[int, Acquisition]] = []
    unmatched = 0
    for target in sorted(targets):
        if not pool:
            unmatched += 1
            continue
        i = bisect_left(pool_dts, target)
        best = None
        for j in (i - 1, i):
            if 0 <= j < len(pool):
                diff = abs(pool_dts[j] - target)
                if best is None or diff < best[0]:
                    best = (diff, j)
        diff, j = best
        if diff > tolerance_days:
            unmatched += 1
            continue
        assigned.append((target, pool[j][1]))
        del pool[j]
        del pool_dts[j]
    return assigned, unmatched


def match_temporal_baselines(
    conflict_plan: StackPlan,
    pre_reference: Acquisition,
    pre_candidates: list[Acquisition],
    war_onset: Optional[date] = None,
    tolerance_days: int = 6,
    min_pairs: int = 15,
    max_bperp_m: float = 250.0,
) -> StackPlan:
    """Build the pre-event plan whose |dt| multiset matches the conflict plan's.

    Candidates are filtered to the pre reference's track and baseline limit,
    then greedily assigned to the conflict stack's absolute temporal
    baselines in ascending order, each secondary used at most once. Emits a
    DegradedMatchWarning when some baselines stay unmatched beyond the
    tolerance; raises when fewer than min_pairs match.
    """
    usable = [
        a for a in pre_candidates
        if a.orbit_path == pre_reference.orbit_path
        and a.direction == pre_reference.direction
        and a.id != pre_reference.id
        and abs(a.cross_track_position - pre_reference.cross_track_position) <= max_bperp_m
        and (war_onset is None or a.day < war_onset)
    ]
    candidates = [(abs((pre_reference.day - a.day).days), a) for a in usable]
    targets = conflict_plan.abs_temporal_baselines()
    assigned, unmatched = _greedy_match(targets, candidates, tolerance_days)
    if len(assigned) < min_pairs:
        raise InsufficientStackError(
            f"matched only {len(assigned)} of {len(targets)} temporal baselines "
            f"for pre reference {pre_reference.id}; need at least {min_pairs}"
        )
    if unmatched:
        warnings.warn(
            DegradedMatchWarning(
                f"{unmatched} conflict temporal baselines unmatched within "
                f"±{tolerance_days} days for pre reference {pre_reference.id}"
            )
        )
    pairs = sorted(
        (pair_baselines(pre_reference, acq) for _, acq in assigned),
        key=lambda p: p.temporal_baseline,
        reverse=True,
    )
    return StackPlan(
        epoch="pre",
        reference=pre_reference.id,
        pairs=pairs,
        timestep_date=conflict_plan.timestep_date,
    )


def _nearest_acquisition(
    candidates: list[Acquisition], target: date
) -> Optional[Acquisition]:
    if not candidates:
        return None
    return min(candidates, key=lambda a: (abs((a.day - target).days), a.id))


def plan_counterfactual(
    catalog: Catalog,
    epoch: EpochConfig,
    conflict_plan: StackPlan,
    tolerance_days: int = 6,
    min_pairs: int = 15,
    max_bperp_m: float = 250.0,
) -> StackPlan:
    """Replay the conflict plan's structure in the counterfactual window.

    Every date in the conflict plan is shifted back by the configured number
    of months and replaced with the nearest same-track acquisition; pairs
    whose resulting |dt| drifts beyond the tolerance are dropped with a
    warning. Archive gaps that leave fewer than min_pairs raise.
    """
    shift = -epoch.counterfactual_shift
    conflict_ref = catalog.get(conflict_plan.reference)
    ref_target = shift_months(conflict_ref.day, shift)
    track = [a for a in catalog.same_track(conflict_ref) if a.day < epoch.war_onset]
    cf_ref = _nearest_acquisition(track, ref_target)
    if cf_ref is None or abs((cf_ref.day - ref_target).days) > tolerance_days:
        raise InsufficientStackError(
            f"no counterfactual reference near {ref_target} on track {conflict_ref.orbit_path}"
        )
    used = {cf_ref.id}
    assigned = []
    unmatched = 0
    for pair in conflict_plan.pairs:
        sec = catalog.get(pair.secondary)
        sec_target = shift_months(sec.day, shift)
        pool = [
            a for a in track
            if a.id not in used
            and a.day < cf_ref.day
            and abs(a.cross_track_position - cf_ref.cross_track_position) <= max_bperp_m
        ]
        candidate = _nearest_acquisition(pool, sec_target)
        if candidate is None:
            unmatched += 1
            continue
        cf_dt = abs((cf_ref.day - candidate.day).days)
        if abs(cf_dt - abs(pair.temporal_baseline)) > tolerance_days:
            unmatched += 1
            continue
        used.add(candidate.id)
        assigned.append(candidate)
    if len(assigned) < min_pairs:
        raise InsufficientStackError(
            f"counterfactual archive gap: matched {len(assigned)} of "
            f"{len(conflict_plan.pairs)} pairs near {ref_target}"
        )
    if unmatched:
        warnings.warn(
            DegradedMatchWarning(
                f"{unmatched} counterfactual pairs unmatched within "
                f"±{tolerance_days} days for reference {cf_ref.id}"
            )
        )
    pairs = sorted(
        (pair_baselines(cf_ref, sec) for sec in assigned),
        key=lambda p: p.temporal_baseline,
        reverse=True,
    )
    return StackPlan(
        epoch="counterfactual",
        reference=cf_ref.id,
        pairs=pairs,
        timestep_date=conflict_plan.timestep_date,
    )


@dataclass
class TimestepPlans:
    """The accepted (conflict, pre, counterfactual) plan triple for one timestep."""

    conflict: StackPlan
    pre: StackPlan
    counterfactual: StackPlan

    def __iter__(self) -> Iterator[StackPlan]:
        return iter((self.conflict, self.pre, self.counterfactual))


def conflict_references(catalog: Catalog, epoch: EpochConfig) -> list[Acquisition]:
    """Acquisitions inside the conflict window, date-ordered; one timestep each."""
    c0, c1 = epoch.conflict_window
    return [a for a in catalog if c0 <= a.day <= c1]


def plan_timestep(
    catalog: Catalog,
    conflict_ref: Acquisition,
    epoch: EpochConfig,
    window_days: int = 30,
    max_pairs: int = 25,
    min_pairs: int = 15,
    max_bperp_m: float = 250.0,
    tolerance_days: int = 6,
) -> TimestepPlans:
    """Plan all three epochs for one conflict acquisition."""
    conflict_plan = plan_stack(
        catalog, conflict_ref, epoch,
        max_pairs=max_pairs, min_pairs=min_pairs, max_bperp_m=max_bperp_m,
    )
    pre_ref = select_reference(catalog, conflict_ref, epoch, window_days=window_days)
    pre_plan = match_temporal_baselines(
        conflict_plan,
        pre_ref,
        list(catalog.same_track(pre_ref)),
        war_onset=epoch.war_onset,
        tolerance_days=tolerance_days,
        min_pairs=min_pairs,
        max_bperp_m=max_bperp_m,
    )
    cf_plan = plan_counterfactual(
        catalog, epoch, conflict_plan,
        tolerance_days=tolerance_days, min_pairs=min_pairs, max_bperp_m=max_bperp_m,
    )
    return TimestepPlans(conflict=conflict_plan, pre=pre_plan, counterfactual=cf_plan)
