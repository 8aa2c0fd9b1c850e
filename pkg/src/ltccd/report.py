"""Render run artifacts into figures and tables.

Figures are SVG files written next to the delimited outputs; they are
static artifacts of a run, not an interactive view. The SVG hash salt is
pinned so reruns produce stable element ids.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.dates as mdates  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402

from .aggregate import RegionSeries  # noqa: E402
from .detect import DamageRecord, persistence_cdf  # noqa: E402
from .errors import EmptyReportError  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "ltccd"

_SAVE_KWARGS = {"format": "svg", "metadata": {"Date": None}}


def render_series(series: Sequence[RegionSeries], path) -> None:
    """Cumulative percent-damaged per region over time."""
    if not series:
        raise EmptyReportError("no region series to plot")
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for s in sorted(series, key=lambda s: s.region_id):
        ax.plot(s.dates, s.percents, label=s.region_id, linewidth=1.5)
    ax.set_xlabel("date")
    ax.set_ylabel("buildings damaged (%)")
    ax.set_title("Cumulative damaged buildings by region")
    ax.legend(loc="upper left", fontsize=8)
    ax.xaxis.set_major_formatter(mdates.DateFormatter("%Y-%m"))
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def render_persistence(records: Sequence[DamageRecord], path) -> None:
    """Empirical CDF of days from first detection to confirmation."""
    table = persistence_cdf(records)
    if not table:
        raise EmptyReportError("no confirmed damage records to plot")
    days = [0] + [d for d, _ in table]
    probs = [0.0] + [p for _, p in table]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.step(days, probs, where="post")
    ax.set_xlabel("days to confirmation")
    ax.set_ylabel("cumulative fraction confirmed")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("Persistence confirmation")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def render_agreement_table(rows_in: Sequence[dict], path) -> None:
    """Fixed-width text table from parsed agreement CSV rows."""
    if not rows_in:
        raise EmptyReportError("no agreement rows to tabulate")
    header = ["image_date", "agreement", "tpr", "fpr", "f1", "csi", "total_locations"]
    rows = [
        [str(row.get(col, "")) for col in header]
        for row in sorted(rows_in, key=lambda r: str(r.get("image_date", "")))
    ]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(header)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")
