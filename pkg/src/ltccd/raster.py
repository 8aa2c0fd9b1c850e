"""Georeferenced single-band grids shared by all pipeline stages.

Grids are plain numpy arrays plus a :class:`GridMeta` describing a north-up
geotransform in a single projected CRS. Files are single-band GeoTIFFs:
float32 for coherence/statistic grids (nodata NaN) and uint8 for masks
(nodata 255). No reprojection or resampling happens anywhere; inputs whose
geotransform differs from the first grid are rejected.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import tifffile

from .errors import AlignmentError, RasterIOError

logger = logging.getLogger(__name__)

FLOAT_NODATA = float("nan")
MASK_NODATA = 255

# TIFF tag codes used for georeferencing.
_TAG_PIXEL_SCALE = 33550
_TAG_TIEPOINT = 33922
_TAG_GEO_KEYS = 34735
_TAG_GDAL_NODATA = 42113

_GEOKEY_MODEL_TYPE = 1024
_GEOKEY_RASTER_TYPE = 1025
_GEOKEY_PROJECTED_CRS = 3072


@dataclass(frozen=True, eq=False)
class GridMeta:
    """Geotransform and shape for a north-up, square-pixel grid.

    ``origin_x``/``origin_y`` locate the outer corner of the top-left pixel
    in the working CRS (meters). Row indices increase southward.
    """

    crs: int
    origin_x: float
    origin_y: float
    width: int
    height: int
    pixel_size: float = 40.0
    nodata: float = FLOAT_NODATA

    def __post_init__(self):
        if self.pixel_size <= 0:
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"grid dimensions must be positive, got {self.width}x{self.height}")

    def __eq__(self, other):
        if not isinstance(other, GridMeta):
            return NotImplemented
        return self.matches(other) and _nodata_equal(self.nodata, other.nodata)

    def __hash__(self):
        return hash((self.crs, self.origin_x, self.origin_y, self.width, self.height, self.pixel_size))

    def matches(self, other: "GridMeta") -> bool:
        """Bitwise-equal geotransform, CRS, and dimensions (nodata excluded)."""
        return (
            self.crs == other.crs
            and self.origin_x == other.origin_x
            and self.origin_y == other.origin_y
            and self.width == other.width
            and self.height == other.height
            and self.pixel_size == other.pixel_size
        )

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) of the grid extent."""
        return (
            self.origin_x,
            self.origin_y - self.height * self.pixel_size,
            self.origin_x + self.width * self.pixel_size,
            self.origin_y,
        )

    def point_to_pixel(self, x: float, y: float) -> tuple[int, int]:
        """Map a point in the working CRS to (row, col); may fall outside the grid."""
        col = math.floor((x - self.origin_x) / self.pixel_size)
        row = math.floor((self.origin_y - y) / self.pixel_size)
        return row, col

    def contains_point(self, x: float, y: float) -> bool:
        row, col = self.point_to_pixel(x, y)
        return 0 <= row < self.height and 0 <= col < self.width

    def pixel_bounds(self, row: int, col: int) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) of one pixel cell."""
        x0 = self.origin_x + col * self.pixel_size
        y1 = self.origin_y - row * self.pixel_size
        return x0, y1 - self.pixel_size, x0 + self.pixel_size, y1


def _nodata_equal(a: float, b: float) -> bool:
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return a == b


@dataclass
class CoherenceGrid:
    """Single-band coherence raster; non-nodata values lie in [0, 1]."""

    meta: GridMeta
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != (self.meta.height, self.meta.width):
            raise ValueError(
                f"value shape {self.values.shape} does not match meta "
                f"{self.meta.height}x{self.meta.width}"
            )

    def valid_mask(self) -> np.ndarray:
        return ~np.isnan(self.values)


@dataclass
class MaskGrid:
    """Binary raster; values are 0/1 with 255 as nodata."""

    meta: GridMeta
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint8)
        if self.values.shape != (self.meta.height, self.meta.width):
            raise ValueError(
                f"value shape {self.values.shape} does not match meta "
                f"{self.meta.height}x{self.meta.width}"
            )
        bad = ~np.isin(self.values, (0, 1, MASK_NODATA))
        if bad.any():
            raise ValueError(f"mask contains {int(bad.sum())} values outside {{0, 1, {MASK_NODATA}}}")


def _geokey_directory(epsg: int) -> tuple[int, ...]:
    return (
        1, 1, 0, 3,
        _GEOKEY_MODEL_TYPE, 0, 1, 1,     # projected model
        _GEOKEY_RASTER_TYPE, 0, 1, 1,    # pixel-is-area
        _GEOKEY_PROJECTED_CRS, 0, 1, epsg,
    )


def _extratags(meta: GridMeta, nodata_text: str):
    geokeys = _geokey_directory(meta.crs)
    return [
        (_TAG_PIXEL_SCALE, "d", 3, (meta.pixel_size, meta.pixel_size, 0.0)),
        (_TAG_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, meta.origin_x, meta.origin_y, 0.0)),
        (_TAG_GEO_KEYS, "H", len(geokeys), geokeys),
        (_TAG_GDAL_NODATA, "s", 0, nodata_text),
    ]


def write_outputs(grid, path, kind: str) -> None:
    """Write a grid or mask as a single-band GeoTIFF.

    kind: "coherence" or "statistic" -> 32-bit float band, nodata NaN;
    "mask" -> 8-bit band, nodata 255. Round-trip reads are bit-exact.
    """
    path = os.fspath(path)
    parent = os.path.dirname(path) or "."
    if not os.path.isdir(parent):
        raise RasterIOError(f"parent directory does not exist: {parent}")
    if kind in ("coherence", "statistic"):
        data = np.asarray(grid.values, dtype=np.float32)
        tags = _extratags(grid.meta, "nan")
    elif kind == "mask":
        data = np.asarray(grid.values, dtype=np.uint8)
        tags = _extratags(grid.meta, str(MASK_NODATA))
    else:
        raise ValueError(f"unknown output kind: {kind!r}")
    try:
        tifffile.imwrite(path, data, extratags=tags)
    except OSError as exc:
        raise RasterIOError(f"failed to write {path}: {exc}") from exc


def _read_page(path: str):
    try:
        with tifffile.TiffFile(path) as tf:
            page = tf.pages[0]
            data = page.asarray()
            tags = {tag.code: tag.value for tag in page.tags}
    except (OSError, tifffile.TiffFileError, IndexError) as exc:
        raise RasterIOError(f"failed to read {path}: {exc}") from exc
    return data, tags


def _meta_from_tags(path: str, data: np.ndarray, tags: dict) -> GridMeta:
    if _TAG_PIXEL_SCALE not in tags or _TAG_TIEPOINT not in tags:
        raise RasterIOError(f"{path} is missing georeferencing tags")
    scale = tags[_TAG_PIXEL_SCALE]
    tie = tags[_TAG_TIEPOINT]
    if scale[0] != scale[1]:
        raise RasterIOError(f"{path} has non-square pixels: {scale[0]} x {scale[1]}")
    epsg = 0
    keys = tags.get(_TAG_GEO_KEYS, ())
    for i in range(4, len(keys), 4):
        if keys[i] == _GEOKEY_PROJECTED_CRS:
            epsg = int(keys[i + 3])
    nodata = FLOAT_NODATA
    nodata_text = tags.get(_TAG_GDAL_NODATA)
    if nodata_text is not None:
        nodata = float(nodata_text)
    if data.ndim != 2:
        raise RasterIOError(f"{path} is not single-band (shape {data.shape})")
    height, width = data.shape
    return GridMeta(
        crs=epsg,
        origin_x=float(tie[3]),
        origin_y=float(tie[4]),
        width=width,
        height=height,
        pixel_size=float(scale[0]),
        nodata=nodata,
    )


def load_grid(path) -> CoherenceGrid:
    """Load a float grid without the [0, 1] coherence range check."""
    path = os.fspath(path)
    data, tags = _read_page(path)
    meta = _meta_from_tags(path, data, tags)
    return CoherenceGrid(meta=meta, values=data.astype(np.float32, copy=False))


def load_mask(path) -> MaskGrid:
    path = os.fspath(path)
    data, tags = _read_page(path)
    meta = _meta_from_tags(path, data, tags)
    meta = replace(meta, nodata=float(MASK_NODATA))
    return MaskGrid(meta=meta, values=data.astype(np.uint8, copy=False))


def clamp_coherence(grid: CoherenceGrid, label: str = "") -> int:
    """Clamp non-nodata values into [0, 1] in place; returns the count clamped.

    Coherence estimators can marginally overshoot the theoretical bounds, so
    out-of-range values are clamped rather than rejected.
    """
    values = grid.values
    out_of_range = ~np.isnan(values) & ((values < 0.0) | (values > 1.0))
    count = int(out_of_range.sum())
    if count:
        np.clip(values, 0.0, 1.0, out=values)
        logger.warning("clamped %d out-of-range coherence values%s", count, f" in {label}" if label else "")
    return count


def load_aligned_stack(paths: Sequence) -> list[CoherenceGrid]:
    """Load coherence grids and require bitwise-identical georeferencing.

    Values outside [0, 1] (excluding nodata) are clamped with a logged count.
    Raises AlignmentError naming the first file whose meta differs.
    """
    grids: list[CoherenceGrid] = []
    reference_meta = None
    for path in paths:
        grid = load_grid(path)
        if reference_meta is None:
            reference_meta = grid.meta
        elif not grid.meta.matches(reference_meta):
            raise AlignmentError(f"grid {os.fspath(path)} is not aligned with the first stack member")
        clamp_coherence(grid, label=os.fspath(path))
        grids.append(grid)
    return grids


def require_aligned(*metas: GridMeta) -> GridMeta:
    """Assert all metas match; returns the shared meta."""
    first = metas[0]
    for meta in metas[1:]:
        if not meta.matches(first):
            raise AlignmentError("grids do not share a geotransform")
    return first
