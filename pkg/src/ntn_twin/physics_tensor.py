"""Per-slot six-channel physics prior over the ground grid.

Channel order (0-based index in the last axis):

    0  free-space path loss, dB
    1  satellite antenna gain toward the cell, dBi
    2  rain attenuation, dB
    3  Doppler shift, Hz
    4  land-cover class code
    5  tropospheric scintillation sigma (log-amplitude, dB)
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import orbital
from .errors import FileFormatError, GeometryError, ShapeError
from .geo_data import RasterGrid, sample_bilinear, sample_nearest
from .orbital import C_LIGHT, EphemerisRecord

N_CHANNELS = 6
CHANNEL_NAMES = ("fspl_db", "gain_dbi", "rain_db", "doppler_hz", "land_class", "scint_sigma")
MAX_RAIN_PATH_KM = 50.0

# ITU-R P.838-3 power-law coefficients at 12 GHz (horizontal / vertical polarisation)
P838_12GHZ_H = (0.02386, 1.1825)
P838_12GHZ_V = (0.02455, 1.1216)


@dataclass(frozen=True)
class GridSpec:
    """N_x x N_y grid; index i runs west->east (lon), j runs south->north (lat)."""

    n_x: int
    n_y: int
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise ShapeError("grid needs n_x, n_y >= 1")
        if not (self.lat_max > self.lat_min and self.lon_max > self.lon_min):
            raise GeometryError("empty bounding box")

    def centers(self):
        """(lat, lon) arrays of shape (n_x, n_y)."""
        dlon = (self.lon_max - self.lon_min) / self.n_x
        dlat = (self.lat_max - self.lat_min) / self.n_y
        lons = self.lon_min + (np.arange(self.n_x) + 0.5) * dlon
        lats = self.lat_min + (np.arange(self.n_y) + 0.5) * dlat
        LO, LA = np.meshgrid(lons, lats, indexing="ij")
        return LA, LO

    def centers_ecef(self):
        lat, lon = self.centers()
        return orbital.geodetic_to_ecef(lat, lon, 0.0)

    def centroid(self):
        return 0.5 * (self.lat_min + self.lat_max), 0.5 * (self.lon_min + self.lon_max)


@dataclass(frozen=True)
class AntennaPattern:
    g_max: float = 38.0  # dBi
    psi_3db: float = 3.0  # deg
    floor_db: float = 30.0

    def __post_init__(self):
        if self.psi_3db <= 0 or self.floor_db <= 0:
            raise ValueError("psi_3db and floor_db must be positive")


@dataclass(frozen=True)
class RainModelParams:
    k_coef: float = P838_12GHZ_H[0]
    alpha_coef: float = P838_12GHZ_H[1]
    rain_height: float = 4.0  # km
    station_height: float = 0.0  # km

    def __post_init__(self):
        if self.k_coef <= 0 or not 0.5 < self.alpha_coef < 2.0:
            raise ValueError("rain coefficients out of range")
        if self.rain_height <= self.station_height:
            raise ValueError("rain height must exceed station height")


@dataclass(frozen=True)
class ScintParams:
    sigma_ref: float = 0.2
    freq_exp: float = 7.0 / 12.0
    elev_exp: float = 1.2

    def __post_init__(self):
        if self.sigma_ref < 0:
            raise ValueError("sigma_ref must be non-negative")


@dataclass
class PhysicsTensor:
    values: np.ndarray  # (n_x, n_y, 6)
    slot: int
    sat_id: int
    elevation: np.ndarray = field(repr=False, default=None)  # deg, (n_x, n_y)
    slant_range: np.ndarray = field(repr=False, default=None)  # km, (n_x, n_y)
    elevation_mask: np.ndarray = field(repr=False, default=None)
    flagged: bool = False

    @property
    def shape(self):
        return self.values.shape


# ---------------------------------------------------------------------------
# scalar link-budget terms (vectorised)
# ---------------------------------------------------------------------------

def fspl_db(distance_km, f_c):
    """20 log10(4 pi D f / c), D given in km."""
    d = np.asarray(distance_km, dtype=float)
    if np.any(d <= 0) or f_c <= 0:
        raise ValueError("distance and frequency must be positive")
    out = 20.0 * np.log10(4.0 * math.pi * d * 1000.0 * f_c / C_LIGHT)
    return float(out) if out.ndim == 0 else out


def off_boresight_angle(theta, phi):
    """Angle (deg) between boresight and a direction at azimuth theta, elevation phi in the beam frame."""
    c = np.cos(np.radians(theta)) * np.cos(np.radians(phi))
    return np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))


def antenna_gain_db(theta, phi, pattern: AntennaPattern):
    """Quadratic roll-off with a side-lobe floor: g_max - min(12 (psi/psi_3db)^2, floor_db)."""
    psi = off_boresight_angle(theta, phi)
    out = pattern.g_max - np.minimum(12.0 * (psi / pattern.psi_3db) ** 2, pattern.floor_db)
    return float(out) if np.ndim(out) == 0 else out


def rain_attenuation_db(rain_rate, elevation, params: RainModelParams):
    """k R^alpha times the slant path through the rain layer (capped at 50 km)."""
    R = np.asarray(rain_rate, dtype=float)
    el = np.asarray(elevation, dtype=float)
    if np.any(R < 0):
        raise ValueError("rain rate must be non-negative")
    if np.any(el <= 0) or np.any(el > 90):
        raise GeometryError("elevation must lie in (0, 90] deg")
    path = (params.rain_height - params.station_height) / np.sin(np.radians(el))
    path = np.minimum(path, MAX_RAIN_PATH_KM)
    out = params.k_coef * R**params.alpha_coef * path
    return float(out) if out.ndim == 0 else out


def scintillation_index(elevation, f_c, params: ScintParams):
    el = np.asarray(elevation, dtype=float)
    if np.any(el <= 0) or np.any(el > 90):
        raise GeometryError("elevation must lie in (0, 90] deg")
    out = params.sigma_ref * (f_c / 12e9) ** params.freq_exp / np.sin(np.radians(el)) ** params.elev_exp
    return float(out) if out.ndim == 0 else out


def beam_angles(sat_pos, boresight_target, points):
    """Azimuth/elevation of ``points`` in a frame whose x-axis is the satellite boresight.

    The boresight points from the satellite to ``boresight_target`` (ECEF km).
    The frame's second axis is perpendicular to boresight and the Earth's
    polar axis (falls back to ECEF x when degenerate).
    """
    s = np.asarray(sat_pos, dtype=float)
    b = np.asarray(boresight_target, dtype=float) - s
    b /= np.linalg.norm(b)
    e1 = np.cross([0.0, 0.0, 1.0], b)
    if np.linalg.norm(e1) < 1e-9:
        e1 = np.cross([1.0, 0.0, 0.0], b)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(b, e1)
    d = np.asarray(points, dtype=float) - s
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    xb, x1, x2 = d @ b, d @ e1, d @ e2
    theta = np.degrees(np.arctan2(x1, xb))
    phi = np.degrees(np.arctan2(x2, np.hypot(xb, x1)))
    return theta, phi


def select_dominant(records, grid: GridSpec) -> EphemerisRecord:
    """Satellite with the highest elevation over the grid centroid; ties -> lower sat_id."""
    if not records:
        raise ValueError("no satellites to choose from")
    lat, lon = grid.centroid()
    center = orbital.geodetic_to_ecef(lat, lon, 0.0)
    best = None
    for rec in sorted(records, key=lambda r: r.sat_id):
        _, el, _ = orbital.look_angles_array(rec.position, center)
        if best is None or el > best[0]:
            best = (float(el), rec)
    return best[1]


def build_physics_tensor(grid: GridSpec, eph: EphemerisRecord, *, f_c: float = 12e9,
                         land: RasterGrid | None = None, rain: RasterGrid | None = None,
                         antenna: AntennaPattern = AntennaPattern(),
                         rain_params: RainModelParams = RainModelParams(),
                         scint: ScintParams = ScintParams(),
                         min_elevation: float = 10.0, slot: int = 0,
                         boresight=None) -> PhysicsTensor:
    """Fill all six channels for every cell from the dominant satellite's state.

    Rain and scintillation are evaluated at ``max(elevation, min_elevation)``;
    cells below ``min_elevation`` are recorded in ``elevation_mask`` and a slot
    with no visible cell is ``flagged``.  ``boresight`` defaults to the grid
    centroid (beam steered at the service area).
    """
    ground = grid.centers_ecef()
    lat, lon = grid.centers()
    _, el, rng = orbital.look_angles_array(eph.position, ground)
    mask = el >= min_elevation
    el_eff = np.maximum(el, min_elevation)

    if boresight is None:
        clat, clon = grid.centroid()
        boresight = orbital.geodetic_to_ecef(clat, clon, 0.0)
    theta, phi = beam_angles(eph.position, boresight, ground)

    rain_rate = np.zeros_like(el) if rain is None else np.maximum(sample_bilinear(rain, lat, lon), 0.0)
    land_code = np.zeros_like(el) if land is None else sample_nearest(land, lat, lon)

    values = np.empty(grid_shape(grid) + (N_CHANNELS,))
    values[..., 0] = fspl_db(rng, f_c)
    values[..., 1] = antenna_gain_db(theta, phi, antenna)
    values[..., 2] = rain_attenuation_db(rain_rate, el_eff, rain_params)
    values[..., 3] = orbital.doppler_shift(eph.position, eph.velocity, ground, f_c)
    values[..., 4] = land_code
    values[..., 5] = scintillation_index(el_eff, f_c, scint)
    return PhysicsTensor(values, slot, eph.sat_id, elevation=el, slant_range=rng,
                         elevation_mask=mask, flagged=not bool(mask.any()))


def grid_shape(grid: GridSpec):
    return (grid.n_x, grid.n_y)


# ---------------------------------------------------------------------------
# normalisation and serialisation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelNormalizer:
    """Per-channel affine z-score; std floors at 1 for constant channels."""

    mean: tuple
    std: tuple

    @classmethod
    def fit(cls, tensors):
        stack = np.stack([np.asarray(t.values if isinstance(t, PhysicsTensor) else t) for t in tensors])
        flat = stack.reshape(-1, stack.shape[-1])
        mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(tuple(float(m) for m in mean), tuple(float(s) for s in std))

    def apply(self, values):
        return (np.asarray(values) - np.array(self.mean)) / np.array(self.std)

    def to_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["mean"]), tuple(d["std"]))


def save_physics_tensor(pt: PhysicsTensor, path, normalizer: ChannelNormalizer | None = None) -> None:
    """Raw little-endian float64 block in (x, y, channel) order plus a ``.json`` sidecar."""
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(pt.values, dtype="<f8").tobytes())
    meta = {"shape": list(pt.values.shape), "slot": int(pt.slot), "sat_id": int(pt.sat_id),
            "channels": list(CHANNEL_NAMES), "flagged": bool(pt.flagged),
            "normalization": None if normalizer is None else normalizer.to_dict()}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_physics_tensor(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    shape = tuple(meta["shape"])
    if raw.size != int(np.prod(shape)):
        raise FileFormatError(f"{path}: payload size {raw.size} does not match shape {shape}")
    pt = PhysicsTensor(raw.reshape(shape).astype(float), meta["slot"], meta["sat_id"], flagged=meta["flagged"])
    norm = None if meta["normalization"] is None else ChannelNormalizer.from_dict(meta["normalization"])
    return pt, norm
