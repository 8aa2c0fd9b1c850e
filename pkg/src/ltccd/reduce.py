"""Reduce a coherence stack to pixelwise mean/std/count statistics.

Per-pixel values are sorted into a canonical order before summation and
accumulated with Kahan compensation, so the result is bit-identical under
any permutation or partitioning of the input stack. The standard deviation
is the population form: stacks are fixed-size planned samples, and the
choice is recorded in the persisted sidecar for reproducibility.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientStackError
from .raster import CoherenceGrid, GridMeta, load_grid, require_aligned, write_outputs


@dataclass
class StackSummary:
    """Pixelwise central tendencies of one epoch's coherence stack."""

    meta: GridMeta
    mean: np.ndarray       # float32, NaN where count < min_count
    std: np.ndarray        # float32, population std, NaN where count < min_count
    count: np.ndarray      # int32 contributing-image count
    epoch: str = ""
    timestep_date: Optional[date] = None

    def defined(self) -> np.ndarray:
        return ~np.isnan(self.mean)


def _compensated_sum(ordered: np.ndarray) -> np.ndarray:
    """Kahan summation along axis 0 of a value-sorted stack (NaN as zero)."""
    total = np.zeros(ordered.shape[1:], dtype=np.float64)
    carry = np.zeros_like(total)
    for layer in ordered:
        x = np.where(np.isnan(layer), 0.0, layer)
        y = x - carry
        t = total + y
        carry = (t - total) - y
        total = t
    return total


def reduce_stack(
    grids: Sequence[CoherenceGrid],
    min_count: int = 15,
    epoch: str = "",
    timestep_date: Optional[date] = None,
) -> StackSummary:
    """Reduce an aligned stack to per-pixel mean, population std, and count.

    Pixels contributed to by fewer than min_count members become nodata in
    mean/std; the count grid keeps the true contribution count.
    """
    if len(grids) < min_count:
        raise InsufficientStackError(
            f"stack has {len(grids)} grids; need at least {min_count}"
        )
    meta = require_aligned(*(g.meta for g in grids))
    stack = np.stack([g.values for g in grids]).astype(np.float64)
    count = np.sum(~np.isnan(stack), axis=0, dtype=np.int32)
    # Canonical per-pixel value order (NaN sorts last) makes the reduction
    # independent of stack order.
    ordered = np.sort(stack, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = _compensated_sum(ordered) / count
        sq = (ordered - mean) ** 2
        var = _compensated_sum(sq) / count
    defined = count >= min_count
    mean = np.clip(mean, 0.0, 1.0)
    std = np.sqrt(np.maximum(var, 0.0))
    mean[~defined] = np.nan
    std[~defined] = np.nan
    return StackSummary(
        meta=meta,
        mean=mean.astype(np.float32),
        std=std.astype(np.float32),
        count=count,
        epoch=epoch,
        timestep_date=timestep_date,
    )


def save_summary(
    summary: StackSummary,
    out_dir,
    basename: str,
    pairs: Optional[list[dict]] = None,
) -> dict:
    """Persist mean/std/count GeoTIFFs plus a JSON sidecar; returns the sidecar."""
    out_dir = Path(out_dir)
    for suffix, values in (("mean", summary.mean), ("std", summary.std),
                           ("count", summary.count.astype(np.float32))):
        grid = CoherenceGrid(meta=summary.meta, values=values)
        write_outputs(grid, out_dir / f"{basename}_{suffix}.tif", "statistic")
    sidecar = {
        "epoch": summary.epoch,
        "timestep_date": summary.timestep_date.isoformat() if summary.timestep_date else None,
        "statistic": "population_std",
        "pairs": pairs or [],
    }
    with open(out_dir / f"{basename}.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar


def load_summary(out_dir, basename: str) -> StackSummary:
    out_dir = Path(out_dir)
    mean = load_grid(out_dir / f"{basename}_mean.tif")
    std = load_grid(out_dir / f"{basename}_std.tif")
    count = load_grid(out_dir / f"{basename}_count.tif")
    require_aligned(mean.meta, std.meta, count.meta)
    with open(out_dir / f"{basename}.json") as fh:
        sidecar = json.load(fh)
    ts = sidecar.get("timestep_date")
    return StackSummary(
        meta=mean.meta,
        mean=mean.values,
        std=std.values,
        count=count.values.astype(np.int32),
        epoch=sidecar.get("epoch", ""),
        timestep_date=date.fromisoformat(ts) if ts else None,
    )
