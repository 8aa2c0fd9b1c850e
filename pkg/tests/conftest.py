"""Shared builders for the test suite.

Grids built by ``make_meta`` put the lower-left corner of the raster at the
CRS origin, so coordinates in tests read like plain plane geometry: x grows
east across columns, y grows north up the rows.
"""

from __future__ import annotations

import re
from datetime import date, datetime

import numpy as np

from ltccd.catalog import Acquisition
from ltccd.raster import GridMeta
from ltccd.reduce import StackSummary


def make_meta(width=4, height=4, pixel_size=40.0, crs=32636):
    return GridMeta(
        crs=crs,
        origin_x=0.0,
        origin_y=height * pixel_size,
        width=width,
        height=height,
        pixel_size=pixel_size,
    )


def make_summary(mean, std, count=None, meta=None, epoch="pre", timestep_date=None):
    """StackSummary from scalars or array-likes; scalars broadcast."""
    mean = np.atleast_2d(np.asarray(mean, dtype=np.float32))
    std = np.broadcast_to(np.asarray(std, dtype=np.float32), mean.shape).copy()
    if count is None:
        count = np.full(mean.shape, 15, dtype=np.int32)
    else:
        count = np.broadcast_to(np.asarray(count, dtype=np.int32), mean.shape).copy()
    if meta is None:
        meta = make_meta(mean.shape[1], mean.shape[0])
    return StackSummary(
        meta=meta, mean=mean, std=std, count=count,
        epoch=epoch, timestep_date=timestep_date,
    )


def acq(acq_id, day, position=0.0, track=87, direction="descending"):
    if isinstance(day, str):
        day = date.fromisoformat(day)
    return Acquisition(
        id=acq_id,
        acquired_at=datetime(day.year, day.month, day.day, 15, 32),
        orbit_path=track,
        direction=direction,
        cross_track_position=position,
    )


_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one PASS/FAIL line per numbered acceptance test."""
    outcomes = {}
    for status, verdict in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(status, ()):
            found = _CRITERION.search(getattr(report, "nodeid", ""))
            if found:
                outcomes[int(found.group(1))] = (verdict, found.group(2).replace("_", " "))
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(outcomes):
        verdict, summary = outcomes[number]
        terminalreporter.write_line(f"[PRIMARY {number}] {verdict}: {summary}")
