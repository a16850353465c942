"""Deterministic traffic baseline from beam footprints over a population raster, and residual synthesis.

Footprint geometry uses a spherical Earth of mean radius ``R_MEAN``; raster
cells are integrated with their exact spherical area, subdivided so that
cells straddling the footprint edge are apportioned.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from ..geo_data import RasterGrid, sample_nearest

log = logging.getLogger(__name__)

R_MEAN = 6371.0088  # km
# traffic values live on a dyadic grid so that total = baseline + residual is exact in float64
TRAFFIC_QUANTUM = 2.0**-20  # Mbps


@dataclass(frozen=True)
class BeamLayout:
    """Beam boresights as (along-track, cross-track) off-nadir angles in degrees."""

    offsets: tuple = ((0.0, 0.0),)
    half_width: float = 10.0
    min_elevation: float = 25.0

    def __post_init__(self):
        if len(self.offsets) < 1:
            raise ValueError("need at least one beam")
        if not self.half_width > 0:
            raise ValueError("beam half-width must be positive")

    @property
    def n_beams(self):
        return len(self.offsets)


def footprint_central_angle(altitude_km, off_nadir_deg, radius=R_MEAN):
    """Earth central angle (rad) reached by a ray at ``off_nadir_deg`` from nadir, capped at the horizon."""
    eta = math.radians(off_nadir_deg)
    s = (radius + altitude_km) / radius * math.sin(eta)
    if s >= 1.0:
        return math.acos(radius / (radius + altitude_km))
    return math.asin(s) - eta


def cap_area(central_angle, radius=R_MEAN):
    return 2.0 * math.pi * radius**2 * (1.0 - math.cos(central_angle))


def unit_vectors(lat, lon):
    la, lo = np.radians(lat), np.radians(lon)
    return np.stack([np.cos(la) * np.cos(lo), np.cos(la) * np.sin(lo), np.sin(la)], axis=-1)


def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def beam_directions(pos, vel, layout: BeamLayout):
    """Unit boresight vectors (N_b, 3) in the frame of ``pos``."""
    r = np.asarray(pos, dtype=float)
    rhat = r / np.linalg.norm(r)
    t = np.asarray(vel, dtype=float) - np.dot(vel, rhat) * rhat
    tn = np.linalg.norm(t)
    if tn == 0:
        t = _cross(np.array([0.0, 0.0, 1.0]), rhat)
        tn = np.linalg.norm(t)
        if tn == 0:
            t, tn = np.array([1.0, 0.0, 0.0]), 1.0
    that = t / tn
    chat = _cross(rhat, that)
    out = []
    for a, c in layout.offsets:
        d = -rhat + math.tan(math.radians(a)) * that + math.tan(math.radians(c)) * chat
        out.append(d / np.linalg.norm(d))
    return np.array(out)


def coverage_mask(pos, boresight, half_width, min_elevation, points, radius=R_MEAN):
    """Ground points (unit vectors, (..., 3)) inside the beam cone and above the elevation mask."""
    p = points * radius
    los = p - pos
    dist = np.linalg.norm(los, axis=-1)
    cos_off = (los @ boresight) / dist
    sin_el = np.einsum("...k,...k->...", -los, points) / dist
    return (cos_off >= math.cos(math.radians(half_width))) & (sin_el >= math.sin(math.radians(min_elevation)))


def _ray_ground_point(pos, direction, radius=R_MEAN):
    """First intersection of the ray with the sphere, as (lat, lon) degrees; None if it misses."""
    b = float(np.dot(pos, direction))
    c = float(np.dot(pos, pos)) - radius**2
    disc = b * b - c
    if disc < 0:
        return None
    s = -b - math.sqrt(disc)
    g = pos + s * direction
    return math.degrees(math.asin(g[2] / np.linalg.norm(g))), math.degrees(math.atan2(g[1], g[0]))


def _cells_near(grid: RasterGrid, lat_c, lon_c, ang_rad):
    """Row and column indices of raster cells whose boxes may intersect a cap (with longitude wrap)."""
    ang = math.degrees(ang_rad) + grid.cell_size
    lat_lo, lat_hi = lat_c - ang, lat_c + ang
    top = grid.yll + grid.n_rows * grid.cell_size
    r0 = max(int(math.floor((top - lat_hi) / grid.cell_size)), 0)
    r1 = min(int(math.ceil((top - lat_lo) / grid.cell_size)), grid.n_rows)
    if r1 <= r0:
        return None, None
    if abs(lat_c) + ang >= 89.0:
        cols = np.arange(grid.n_cols)
    else:
        dlon = ang / math.cos(math.radians(abs(lat_c) + ang))
        if 2 * dlon >= 360.0:
            cols = np.arange(grid.n_cols)
        else:
            c0 = int(math.floor((lon_c - dlon - grid.xll) / grid.cell_size))
            c1 = int(math.ceil((lon_c + dlon - grid.xll) / grid.cell_size))
            cols = np.arange(c0, c1)
            span = grid.n_cols * grid.cell_size
            if span >= 360.0 - 1e-9:
                cols = np.unique(cols % grid.n_cols)
            else:
                cols = cols[(cols >= 0) & (cols < grid.n_cols)]
    if len(cols) == 0:
        return None, None
    return np.arange(r0, r1), cols


def _penetration(land: RasterGrid | None, classes: dict | None, lat, lon):
    if land is None or classes is None:
        return np.ones_like(lat)
    codes = sample_nearest(land, lat, lon)
    pen = np.zeros_like(lat)
    for code in np.unique(codes[np.isfinite(codes)]):
        pen[codes == code] = classes[int(code)].penetration
    return pen


def footprint_integral(pos, boresight, central_angle, pop: RasterGrid, layout: BeamLayout,
                       land=None, classes=None, subsample: int = 4, radius=R_MEAN):
    """sum over cells of density x penetration x covered area (people); ``pos`` in km, any Earth-fixed frame."""
    gp = _ray_ground_point(pos, boresight, radius)
    rn = np.linalg.norm(pos)
    nadir = (math.degrees(math.asin(pos[2] / rn)), math.degrees(math.atan2(pos[1], pos[0])))
    center = gp if gp is not None else nadir
    rows, cols = _cells_near(pop, center[0], center[1], central_angle)
    if rows is None:
        log.warning("beam footprint lies outside the population raster")
        return 0.0
    vals = pop.values[np.ix_(rows, cols)]
    vals = np.where(vals == pop.nodata, 0.0, vals)
    if not np.any(vals):
        return 0.0
    cs = pop.cell_size
    top = pop.yll + pop.n_rows * cs
    frac = (np.arange(subsample) + 0.5) / subsample
    # sub-cell centres
    lat_n = top - (rows[:, None] + frac[None, :]) * cs  # (R, s)
    lon_e = pop.xll + (cols[:, None] + frac[None, :]) * cs  # (C, s)
    lat_b = np.radians(top - (rows[:, None] + np.arange(subsample + 1)[None, :] / subsample) * cs)
    band = np.abs(np.diff(np.sin(lat_b), axis=1))  # (R, s)
    sub_area = radius**2 * math.radians(cs / subsample) * band  # (R, s)
    LA = np.broadcast_to(lat_n[:, None, :, None], (len(rows), len(cols), subsample, subsample))
    LO = np.broadcast_to(lon_e[None, :, None, :], LA.shape)
    inside = coverage_mask(pos, boresight, layout.half_width, layout.min_elevation, unit_vectors(LA, LO), radius)
    dens = vals[:, :, None, None]
    pen = _penetration(land, classes, LA, LO)
    area = sub_area[:, None, :, None]
    return float(np.sum(dens * pen * inside * area))


def peak_pool(pos, boresight, pop: RasterGrid, land=None, classes=None, window_deg=0.1, radius=R_MEAN):
    """Maximum suppressed density over a window centred on the beam's ground point (people / km^2)."""
    gp = _ray_ground_point(pos, boresight, radius)
    if gp is None:
        return 0.0
    lat_c, lon_c = gp
    h = window_deg / 2.0
    offs = np.linspace(-h, h, 5)
    LA, LO = np.meshgrid(lat_c + offs, lon_c + offs, indexing="ij")
    LA = np.clip(LA, -90.0, 90.0)
    dens = sample_nearest(pop, LA, LO)
    dens = np.where(np.isfinite(dens) & (dens != pop.nodata), dens, 0.0)
    return float(np.max(dens * _penetration(land, classes, LA, LO)))


def physics_baseline(positions, velocities, pop: RasterGrid, layout: BeamLayout, rho: float,
                     land=None, classes=None, mode: str = "integral", subsample: int = 4):
    """Baseline traffic (Mbps) for every satellite and beam at one slot, shape (N_s, N_b).

    ``rho`` is the demand per person (Mbps); positions/velocities are ECEF km, km/s.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    velocities = np.atleast_2d(np.asarray(velocities, dtype=float))
    out = np.zeros((len(positions), layout.n_beams))
    for m, (pos, vel) in enumerate(zip(positions, velocities)):
        alt = np.linalg.norm(pos) - R_MEAN
        for b, d in enumerate(beam_directions(pos, vel, layout)):
            if mode == "integral":
                off = math.hypot(*layout.offsets[b])
                ang = footprint_central_angle(alt, off + layout.half_width)
                out[m, b] = rho * footprint_integral(pos, d, ang, pop, layout, land, classes, subsample)
            elif mode == "peak":
                out[m, b] = rho * peak_pool(pos, d, pop, land, classes)
            else:
                raise ValueError(f"unknown baseline mode {mode!r}")
    return out


def hanning_smooth(series, window: int = 11, axis: int = 0):
    """Unit-gain Hanning filter along ``axis`` with edge padding (output length preserved)."""
    series = np.asarray(series, dtype=float)
    if window <= 1:
        return series.copy()
    w = np.hanning(window + 2)[1:-1]
    w = w / w.sum()
    half = window // 2
    pad = [(0, 0)] * series.ndim
    pad[axis] = (half, window - 1 - half)
    padded = np.pad(series, pad, mode="edge")
    return np.apply_along_axis(lambda s: np.convolve(s, w, mode="valid"), axis, padded)


def synthesize_residual(shape, phi: float, sigma: float, seed, plane_ids=None, plane_weight: float = 0.0,
                        burst_rate: float = 0.0, burst_scale: float = 1.0):
    """AR-1 residual series of shape (T, N_s, N_b).

    r = sqrt(w) F_plane + sqrt(1 - w) eps where F (one per plane and beam) and
    eps (one per satellite and beam) are independent AR-1 processes with the
    same phi and innovation std sigma, started from their stationary law; the
    mixture is again AR-1(phi, sigma).  Bursts multiply the emitted value (not
    the AR state) by ``burst_scale`` with probability ``burst_rate``.
    """
    if abs(phi) >= 1.0:
        raise ValueError("AR-1 coefficient must satisfy |phi| < 1")
    if sigma < 0 or not 0.0 <= plane_weight <= 1.0:
        raise ValueError("bad residual parameters")
    T, n_s, n_b = shape
    rng = np.random.default_rng(seed)

    def ar1(n_series):
        x = np.empty((T, n_series, n_b))
        x[0] = rng.standard_normal((n_series, n_b)) * sigma / math.sqrt(1.0 - phi**2)
        e = rng.standard_normal((T, n_series, n_b)) * sigma
        for t in range(1, T):
            x[t] = phi * x[t - 1] + e[t]
        return x

    r = ar1(n_s)
    if plane_weight > 0:
        if plane_ids is None:
            raise ValueError("plane_weight needs plane_ids")
        plane_ids = np.asarray(plane_ids)
        uniq, inv = np.unique(plane_ids, return_inverse=True)
        f = ar1(len(uniq))
        r = math.sqrt(plane_weight) * f[:, inv] + math.sqrt(1.0 - plane_weight) * r
    if burst_rate > 0:
        spikes = rng.random(r.shape) < burst_rate
        r = np.where(spikes, r * burst_scale, r)
    return r


def quantize(x):
    """Round to the dyadic traffic grid; sums and differences of such values below 2**32 are exact."""
    return np.round(np.asarray(x, dtype=float) / TRAFFIC_QUANTUM) * TRAFFIC_QUANTUM


def decompose(total, baseline):
    total, baseline = np.asarray(total), np.asarray(baseline)
    if total.shape != baseline.shape:
        raise ShapeError(f"shape mismatch {total.shape} vs {baseline.shape}")
    return total - baseline


def recompose(residual, baseline):
    residual, baseline = np.asarray(residual), np.asarray(baseline)
    if residual.shape != baseline.shape:
        raise ShapeError(f"shape mismatch {residual.shape} vs {baseline.shape}")
    return residual + baseline
