"""Synthetic service areas, overhead passes and rasters for desk-scale experiments."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import orbital
from .channel_sim import ChannelScenario, LinkBudget, generate_channel_dataset
from .geo_data import class_table, raster_from_function
from .physics_tensor import GridSpec, build_physics_tensor

# 2024-03-20 00:00:00 UTC
DEFAULT_EPOCH = 1710892800.0


@dataclass
class ToyChannelSetup:
    grid: GridSpec
    tle: orbital.TleRecord
    land: object
    rain: object
    dt: float
    tau: float
    n_slots: int


def service_area(center=(10.0, 100.0), span_deg=0.4, n=16) -> GridSpec:
    lat0, lon0 = center
    h = span_deg / 2.0
    return GridSpec(n, n, lat0 - h, lat0 + h, lon0 - h, lon0 + h)


def overhead_pass(center, t_zenith, altitude_km=550.0, inclination=53.0, sat_id=1,
                  epoch=DEFAULT_EPOCH) -> orbital.TleRecord:
    """Circular orbit whose ascending ground track crosses ``center`` at ``t_zenith`` seconds."""
    lat0, lon0 = center
    if abs(lat0) >= inclination:
        raise ValueError("centre latitude not reachable at this inclination")
    probe = orbital.TleRecord.circular(sat_id, altitude_km, inclination, 0.0, 0.0, epoch)
    n_deg = probe.mean_motion * 360.0 / orbital.SECONDS_PER_DAY
    u_z = math.degrees(math.asin(math.sin(math.radians(lat0)) / math.sin(math.radians(inclination))))
    m0 = (u_z - n_deg * t_zenith) % 360.0
    tle = orbital.TleRecord.circular(sat_id, altitude_km, inclination, 0.0, m0, epoch)
    # rotating the node shifts the ground track rigidly in longitude; shifting the
    # phase moves the sub-satellite point along track (geodetic vs geocentric latitude)
    sin_i = math.sin(math.radians(inclination))
    for _ in range(4):
        lat, lon, _ = orbital.ecef_to_geodetic(orbital.propagate(tle, t_zenith).position)
        dlon = (lon0 - float(lon) + 180.0) % 360.0 - 180.0
        u = math.asin(max(-1.0, min(1.0, math.sin(math.radians(float(lat))) / sin_i)))
        du = math.degrees(math.cos(math.radians(float(lat))) / (sin_i * math.cos(u))) * math.radians(lat0 - float(lat))
        m0 = (m0 + du) % 360.0
        tle = orbital.TleRecord.circular(sat_id, altitude_km, inclination, (tle.raan + dlon) % 360.0, m0, epoch)
    return tle


def toy_land(grid: GridSpec):
    """Ocean on the west edge, rural interior, one urban block."""
    lat0, lon0 = grid.centroid()
    span = grid.lon_max - grid.lon_min

    def fn(lat, lon):
        x = (lon - lon0) / span
        y = (lat - lat0) / span
        code = np.where(x < -0.3, 0, 1)
        urban = (np.abs(x - 0.15) < 0.08) & (np.abs(y + 0.1) < 0.08)
        return np.where(urban, 2, code)

    pad = span
    return raster_from_function(fn, (grid.lat_min - pad, grid.lat_max + pad),
                                (grid.lon_min - pad, grid.lon_max + pad), span / 32.0)


def toy_rain(grid: GridSpec, peak=25.0):
    """Two Gaussian convective cells (mm/h)."""
    lat0, lon0 = grid.centroid()
    span = grid.lon_max - grid.lon_min

    def fn(lat, lon):
        x = (lon - lon0) / span
        y = (lat - lat0) / span
        r1 = np.exp(-((x - 0.2) ** 2 + (y - 0.25) ** 2) / (2 * 0.12**2))
        r2 = 0.6 * np.exp(-((x + 0.25) ** 2 + (y + 0.2) ** 2) / (2 * 0.18**2))
        return peak * (r1 + r2)

    pad = span
    return raster_from_function(fn, (grid.lat_min - pad, grid.lat_max + pad),
                                (grid.lon_min - pad, grid.lon_max + pad), span / 32.0)


def toy_channel_setup(n_samples=2000, n=16, dt=0.1, tau=0.3, center=(10.0, 100.0), span_deg=0.4,
                      zenith_fraction=0.55) -> ToyChannelSetup:
    """One overhead pass sampled every ``dt`` seconds; zenith is placed inside the training block
    so the test block's elevations are also covered by training slots."""
    from .channel_sim import slot_delay

    n_slots = n_samples + slot_delay(tau, dt)
    grid = service_area(center, span_deg, n)
    tle = overhead_pass(grid.centroid(), zenith_fraction * n_slots * dt)
    return ToyChannelSetup(grid, tle, toy_land(grid), toy_rain(grid), dt, tau, n_slots)


def physics_sequence(setup: ToyChannelSetup, budget: LinkBudget):
    out = []
    for n in range(setup.n_slots):
        eph = orbital.propagate(setup.tle, n * setup.dt)
        out.append(build_physics_tensor(setup.grid, eph, f_c=budget.f_c, land=setup.land, rain=setup.rain,
                                        min_elevation=budget.min_elevation, slot=n))
    return out


def toy_channel_dataset(out_dir, n_samples=2000, seed=0, n=16, pilot_density=0.05, budget=None, **kw):
    setup = toy_channel_setup(n_samples, n, **kw)
    budget = budget or LinkBudget()
    scenario = ChannelScenario(budget, class_table(), setup.tau, setup.dt, pilot_density, seed=seed,
                               extras={"scenario": "toy_overhead_pass"})
    return generate_channel_dataset(physics_sequence(setup, budget), scenario, out_dir)


# ---------------------------------------------------------------------------
# traffic
# ---------------------------------------------------------------------------

# (lat, lon, peak people/km^2, radius deg)
TOY_CITIES = ((35.7, 139.7, 6000.0, 0.6), (40.7, -74.0, 5000.0, 0.5), (51.5, -0.1, 4000.0, 0.5),
              (-23.5, -46.6, 4500.0, 0.6), (28.6, 77.2, 7000.0, 0.7), (30.0, 31.2, 5000.0, 0.4),
              (-33.9, 151.2, 2500.0, 0.4), (6.5, 3.4, 5500.0, 0.5), (19.4, -99.1, 5000.0, 0.6),
              (1.35, 103.8, 6000.0, 0.3))


def toy_constellation(n_planes=2, per_plane=10, altitude_km=550.0, inclination=53.0, raan_step=20.0,
                      phase_offset=9.0, epoch=DEFAULT_EPOCH):
    """Walker-like circular shells: ``per_plane`` satellites evenly phased in each plane."""
    tles = []
    for p in range(n_planes):
        for s in range(per_plane):
            m = (s * 360.0 / per_plane + p * phase_offset) % 360.0
            tles.append(orbital.TleRecord.circular(100 * (p + 1) + s, altitude_km, inclination,
                                                   p * raan_step, m, epoch))
    return tles


def toy_population(cell_size=0.5, background=50.0, cities=TOY_CITIES):
    """Global density raster (people / km^2): uniform background plus Gaussian metropolitan areas."""
    def fn(lat, lon):
        out = np.full(np.shape(lat), background)
        for clat, clon, peak, rad in cities:
            dlon = (lon - clon + 180.0) % 360.0 - 180.0
            d2 = (lat - clat) ** 2 + (dlon * np.cos(np.radians(clat))) ** 2
            out = out + peak * np.exp(-d2 / (2 * rad**2))
        return out
    return raster_from_function(fn, (-90.0, 90.0), (-180.0, 180.0), cell_size)


def toy_land_for_population(pop, urban_threshold=1000.0):
    """Urban where density exceeds the threshold, rural elsewhere."""
    from .geo_data import RasterGrid
    codes = np.where(pop.values > urban_threshold, 2.0, 1.0)
    return RasterGrid(pop.n_cols, pop.n_rows, pop.xll, pop.yll, pop.cell_size, pop.nodata, codes)


def toy_traffic_dataset(out_dir, n_slots=10000, seed=0, scenario=None, n_planes=2, per_plane=10):
    from .traffic_dt.training import TrafficScenario, generate_traffic_dataset

    scenario = scenario or TrafficScenario(n_slots=n_slots, seed=seed, rho=1e-4, sigma=5.0)
    pop = toy_population()
    land = toy_land_for_population(pop)
    return generate_traffic_dataset(toy_constellation(n_planes, per_plane), pop, scenario, out_dir,
                                    land=land, classes=class_table())
