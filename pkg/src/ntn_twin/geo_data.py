"""Terrestrial raster layers (population density, land cover, rain rate) in ESRI ASCII grid form."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FileFormatError, GeometryError

HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


@dataclass(frozen=True)
class RasterGrid:
    """Regular lat/lon raster; ``values[0]`` is the northernmost row."""

    n_cols: int
    n_rows: int
    xll: float  # lon of the lower-left corner, deg
    yll: float  # lat of the lower-left corner, deg
    cell_size: float  # deg
    nodata: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n_cols < 1 or self.n_rows < 1:
            raise FileFormatError("raster must have at least one row and column")
        if not self.cell_size > 0:
            raise FileFormatError("cellsize must be positive")
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.n_rows, self.n_cols):
            raise FileFormatError(f"values shape {vals.shape} != ({self.n_rows}, {self.n_cols})")
        valid = vals[vals != self.nodata]
        if not np.all(np.isfinite(valid)):
            raise FileFormatError("non-finite raster value")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def bounds(self):
        """(lat_min, lat_max, lon_min, lon_max)."""
        return (self.yll, self.yll + self.n_rows * self.cell_size,
                self.xll, self.xll + self.n_cols * self.cell_size)

    def cell_centers(self):
        """Latitude per row and longitude per column of the cell centres."""
        lats = self.yll + (self.n_rows - np.arange(self.n_rows) - 0.5) * self.cell_size
        lons = self.xll + (np.arange(self.n_cols) + 0.5) * self.cell_size
        return lats, lons

    def valid_mask(self):
        return self.values != self.nodata

    def __eq__(self, other):
        if not isinstance(other, RasterGrid):
            return NotImplemented
        return (self.n_cols == other.n_cols and self.n_rows == other.n_rows
                and self.xll == other.xll and self.yll == other.yll
                and self.cell_size == other.cell_size
                and (self.nodata == other.nodata or (math.isnan(self.nodata) and math.isnan(other.nodata)))
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True)
class LandCoverClass:
    code: int
    name: str
    rician_k_db: float  # -inf means Rayleigh, +inf means line-of-sight only
    penetration: float

    def __post_init__(self):
        if not 0.0 <= self.penetration <= 1.0:
            raise ValueError(f"penetration {self.penetration} outside [0, 1]")


DEFAULT_CLASSES = (
    LandCoverClass(0, "Ocean", 12.0, 0.0),
    LandCoverClass(1, "Rural", 8.0, 0.80),
    LandCoverClass(2, "Urban", -math.inf, 0.05),
)


def class_table(classes=DEFAULT_CLASSES) -> dict[int, LandCoverClass]:
    """Index classes by code, rejecting duplicates."""
    table = {}
    for c in classes:
        if c.code in table:
            raise ValueError(f"duplicate land-cover code {c.code}")
        table[c.code] = c
    return table


def class_table_from_config(entries) -> dict[int, LandCoverClass]:
    """Build a class table from a list of ``{code, name, k_db, penetration}`` dicts.

    ``k_db`` may be a number, ``"-inf"`` (Rayleigh) or ``"inf"`` (LoS only).
    """
    return class_table(LandCoverClass(int(e["code"]), str(e["name"]), float(e["k_db"]),
                                      float(e["penetration"])) for e in entries)


def load_raster(path) -> RasterGrid:
    """Read an ESRI ASCII grid: six header lines, then row-major values, north row first."""
    tokens = Path(path).read_text().split()
    header = {}
    pos = 0
    while pos + 1 < len(tokens) and not _is_number(tokens[pos]):
        header[tokens[pos].lower()] = tokens[pos + 1]
        pos += 2
    for key in HEADER_KEYS:
        if key not in header:
            raise FileFormatError(f"{path}: missing header key {key!r}")
    try:
        n_cols, n_rows = int(header["ncols"]), int(header["nrows"])
        xll, yll = float(header["xllcorner"]), float(header["yllcorner"])
        cell, nodata = float(header["cellsize"]), float(header["nodata_value"])
        values = np.array([float(t) for t in tokens[pos:]])
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from None
    if values.size != n_cols * n_rows:
        raise FileFormatError(f"{path}: expected {n_cols * n_rows} values, found {values.size}")
    return RasterGrid(n_cols, n_rows, xll, yll, cell, nodata, values.reshape(n_rows, n_cols))


def save_raster(grid: RasterGrid, path) -> None:
    """Write ``grid`` so that ``load_raster`` reproduces it bit-exactly."""
    lines = [
        f"ncols {grid.n_cols}",
        f"nrows {grid.n_rows}",
        f"xllcorner {grid.xll!r}",
        f"yllcorner {grid.yll!r}",
        f"cellsize {grid.cell_size!r}",
        f"NODATA_value {grid.nodata!r}",
    ]
    for row in grid.values:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _is_number(tok):
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _fractional_index(grid: RasterGrid, lat, lon):
    """Continuous (row, col) coordinates where integer+0.5 is a cell centre."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    lat_min, lat_max, _, _ = grid.bounds
    width = grid.n_cols * grid.cell_size
    rel_lon = np.mod(lon - grid.xll, 360.0)
    if np.any((lat < lat_min) | (lat > lat_max)):
        raise GeometryError("latitude outside raster bounds")
    if width < 360.0 and np.any(rel_lon > width):
        raise GeometryError("longitude outside raster bounds")
    col = rel_lon / grid.cell_size
    row = (lat_max - lat) / grid.cell_size
    return row, col


def sample_nearest(grid: RasterGrid, lat, lon):
    """Value of the cell containing each query point (no interpolation)."""
    row, col = _fractional_index(grid, lat, lon)
    r = np.clip(np.floor(row).astype(int), 0, grid.n_rows - 1)
    c = np.clip(np.floor(col).astype(int), 0, grid.n_cols - 1)
    out = grid.values[r, c]
    return float(out) if out.ndim == 0 else out


def sample_bilinear(grid: RasterGrid, lat, lon):
    """Bilinear interpolation between the four surrounding cell centres.

    Queries in the outer half-cell band clamp to the edge centres.  If any of
    the four neighbours is nodata, the nearest-cell value is returned instead.
    """
    row, col = _fractional_index(grid, lat, lon)
    y = np.clip(row - 0.5, 0.0, grid.n_rows - 1)
    x = np.clip(col - 0.5, 0.0, grid.n_cols - 1)
    r0 = np.minimum(np.floor(y).astype(int), max(grid.n_rows - 2, 0))
    c0 = np.minimum(np.floor(x).astype(int), max(grid.n_cols - 2, 0))
    r1 = np.minimum(r0 + 1, grid.n_rows - 1)
    c1 = np.minimum(c0 + 1, grid.n_cols - 1)
    fy = y - r0
    fx = x - c0
    v = grid.values
    q00, q01, q10, q11 = v[r0, c0], v[r0, c1], v[r1, c0], v[r1, c1]
    out = (q00 * (1 - fy) * (1 - fx) + q01 * (1 - fy) * fx
           + q10 * fy * (1 - fx) + q11 * fy * fx)
    bad = (q00 == grid.nodata) | (q01 == grid.nodata) | (q10 == grid.nodata) | (q11 == grid.nodata)
    if np.any(bad):
        out = np.where(bad, sample_nearest(grid, lat, lon), out)
    return float(out) if np.ndim(out) == 0 else out


def raster_from_function(fn, lat_range, lon_range, cell_size, nodata=-9999.0) -> RasterGrid:
    """Rasterise ``fn(lat, lon)`` evaluated at cell centres over the given box."""
    n_rows = int(round((lat_range[1] - lat_range[0]) / cell_size))
    n_cols = int(round((lon_range[1] - lon_range[0]) / cell_size))
    lats = lat_range[0] + (n_rows - np.arange(n_rows) - 0.5) * cell_size
    lons = lon_range[0] + (np.arange(n_cols) + 0.5) * cell_size
    LA, LO = np.meshgrid(lats, lons, indexing="ij")
    vals = np.broadcast_to(np.asarray(fn(LA, LO), dtype=float), LA.shape).copy()
    return RasterGrid(n_cols, n_rows, float(lon_range[0]), float(lat_range[0]), float(cell_size), nodata, vals)
