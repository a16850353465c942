"""
Orbital mechanics: TLE parsing, mean-element propagation, and Earth-fixed geometry.

Propagation is Keplerian two-body motion from TLE mean elements with optional
J2 secular drift of the node, perigee and mean anomaly.  It is not SGP4; when
exact SGP4 trajectories are needed, generate them externally and ingest them
through :func:`read_ephemeris`.

Units: km, km/s, seconds, degrees at the API surface (radians internally).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConvergenceError, FileFormatError, GeometryError, PropagationError, TleParseError

MU_EARTH = 398600.4418  # km^3/s^2
C_LIGHT = 299_792_458.0  # m/s
OMEGA_EARTH = 7.2921150e-5  # rad/s
J2 = 1.08262668e-3
R_EQ = 6378.137  # km, WGS-84 equatorial radius (also the J2 reference radius)
WGS84_F = 1.0 / 298.257223563
WGS84_B = R_EQ * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)
SECONDS_PER_DAY = 86400.0

KEPLER_TOL = 1e-12
KEPLER_MAX_ITER = 50

EPHEMERIS_HEADER = ("sat_id", "t_s", "x_km", "y_km", "z_km", "vx_kms", "vy_kms", "vz_kms")


@dataclass(frozen=True)
class TleRecord:
    sat_id: int
    epoch: float  # UTC, seconds since the Unix epoch
    inclination: float  # deg
    raan: float  # deg
    eccentricity: float
    arg_perigee: float  # deg
    mean_anomaly: float  # deg
    mean_motion: float  # rev/day
    bstar: float  # 1/earth-radii
    name: str = ""

    def __post_init__(self):
        if not 0.0 <= self.eccentricity < 1.0:
            raise PropagationError(f"eccentricity {self.eccentricity} outside [0, 1)")
        if not 0.0 < self.mean_motion < 20.0:
            raise PropagationError(f"mean motion {self.mean_motion} rev/day outside (0, 20)")
        if not 0.0 <= self.inclination <= 180.0:
            raise PropagationError(f"inclination {self.inclination} outside [0, 180]")

    @property
    def semi_major_axis(self) -> float:
        n = self.mean_motion * 2.0 * math.pi / SECONDS_PER_DAY
        return (MU_EARTH / n**2) ** (1.0 / 3.0)

    @classmethod
    def circular(cls, sat_id, altitude_km, inclination, raan=0.0, mean_anomaly=0.0, epoch=0.0):
        """Build a circular-orbit record at the given altitude above the equatorial radius."""
        a = R_EQ + altitude_km
        n_rev_day = math.sqrt(MU_EARTH / a**3) * SECONDS_PER_DAY / (2.0 * math.pi)
        return cls(sat_id, epoch, inclination, raan, 0.0, 0.0, mean_anomaly, n_rev_day, 0.0)


@dataclass(frozen=True)
class EphemerisRecord:
    sat_id: int
    t: float
    position: np.ndarray  # ECEF km
    velocity: np.ndarray  # ECEF km/s


@dataclass(frozen=True)
class GeodeticPoint:
    lat: float
    lon: float
    alt: float = 0.0  # metres

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise GeometryError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon < 180.0:
            raise GeometryError(f"longitude {self.lon} outside [-180, 180)")


@dataclass(frozen=True)
class LookAngles:
    azimuth: float
    elevation: float
    slant_range: float


# ---------------------------------------------------------------------------
# TLE parsing
# ---------------------------------------------------------------------------

def tle_checksum(line: str) -> int:
    """Mod-10 checksum over columns 1-68: digits count their value, '-' counts 1."""
    total = 0
    for ch in line[:68]:
        if ch.isdigit():
            total += int(ch)
        elif ch == "-":
            total += 1
    return total % 10


def _field(line, start, stop, lineno, label, conv=float):
    # TLE columns are 1-indexed and inclusive
    raw = line[start - 1:stop]
    try:
        return conv(raw.strip())
    except ValueError:
        raise TleParseError(f"cannot parse {label} from {raw!r}", lineno) from None


def _implied_decimal(raw: str, lineno: int, label: str) -> float:
    """Decode fields like ' 11606-4' (=0.11606e-4) or '-12345-5'."""
    s = raw.strip()
    if not s:
        return 0.0
    sign = -1.0 if s[0] == "-" else 1.0
    if s[0] in "+-":
        s = s[1:]
    try:
        if len(s) >= 2 and s[-2] in "+-":
            mantissa, exponent = s[:-2], int(s[-2:])
        else:
            mantissa, exponent = s, 0
        return sign * float("0." + mantissa.strip()) * 10.0**exponent
    except ValueError:
        raise TleParseError(f"cannot parse {label} from {raw!r}", lineno) from None


def _tle_epoch(year2: int, day: float) -> float:
    year = 1900 + year2 if year2 >= 57 else 2000 + year2
    start = datetime(year, 1, 1, tzinfo=timezone.utc)
    # day-of-year is 1-based with a fractional part
    return (start + timedelta(days=day - 1.0)).timestamp()


def parse_tle(text: str) -> list[TleRecord]:
    """Parse concatenated 2-line or 3-line (named) element sets.

    Errors (length, checksum, numeric fields) are reported with 1-based line
    numbers of the input text.
    """
    lines = [(i + 1, ln.rstrip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln.strip()]
    records = []
    k = 0
    while k < len(lines):
        name = ""
        lineno, line = lines[k]
        if not line.startswith("1 "):
            if line.startswith("2 "):
                raise TleParseError("line 2 without preceding line 1", lineno)
            name = line.strip()
            if name.startswith("0 "):
                name = name[2:].strip()
            k += 1
        if k + 1 >= len(lines):
            raise TleParseError("truncated element set", lines[-1][0])
        (n1, l1), (n2, l2) = lines[k], lines[k + 1]
        k += 2
        for n, ln, expected in ((n1, l1, "1"), (n2, l2, "2")):
            if not ln.startswith(expected + " "):
                raise TleParseError(f"expected line number {expected}", n)
            if len(ln) != 69:
                raise TleParseError(f"line length {len(ln)} != 69", n)
            if not ln[68].isdigit():
                raise TleParseError("missing checksum digit", n)
            if tle_checksum(ln) != int(ln[68]):
                raise TleParseError(f"checksum mismatch (expected {tle_checksum(ln)}, found {ln[68]})", n)

        sat1 = _field(l1, 3, 7, n1, "satellite number", int)
        sat2 = _field(l2, 3, 7, n2, "satellite number", int)
        if sat1 != sat2:
            raise TleParseError(f"satellite number mismatch {sat1} vs {sat2}", n2)
        year2 = _field(l1, 19, 20, n1, "epoch year", int)
        day = _field(l1, 21, 32, n1, "epoch day")
        bstar = _implied_decimal(l1[53:61], n1, "bstar")
        ecc_raw = l2[26:33].strip()
        if not ecc_raw.isdigit():
            raise TleParseError(f"cannot parse eccentricity from {ecc_raw!r}", n2)
        try:
            records.append(TleRecord(
                sat_id=sat1,
                epoch=_tle_epoch(year2, day),
                inclination=_field(l2, 9, 16, n2, "inclination"),
                raan=_field(l2, 18, 25, n2, "RAAN"),
                eccentricity=float("0." + ecc_raw),
                arg_perigee=_field(l2, 35, 42, n2, "argument of perigee"),
                mean_anomaly=_field(l2, 44, 51, n2, "mean anomaly"),
                mean_motion=_field(l2, 53, 63, n2, "mean motion"),
                bstar=bstar,
                name=name,
            ))
        except PropagationError as exc:
            raise TleParseError(str(exc), n2) from None
    return records


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------

def solve_kepler(mean_anomaly: float, e: float) -> float:
    """Eccentric anomaly by Newton iteration (tol 1e-12 rad, at most 50 steps)."""
    if not 0.0 <= e < 1.0:
        raise PropagationError(f"eccentricity {e} outside [0, 1)")
    M = math.remainder(mean_anomaly, 2.0 * math.pi)
    E = M if e < 0.8 else math.pi * math.copysign(1.0, M)
    for _ in range(KEPLER_MAX_ITER):
        dE = (E - e * math.sin(E) - M) / (1.0 - e * math.cos(E))
        E -= dE
        if abs(dE) < KEPLER_TOL:
            return E
    raise ConvergenceError(f"Kepler equation did not converge (M={M}, e={e})")


def gmst(unix_seconds: float) -> float:
    """Greenwich mean sidereal time in radians (IAU-82 polynomial, UT1 ~ UTC)."""
    jd = unix_seconds / SECONDS_PER_DAY + 2440587.5
    T = (jd - 2451545.0) / 36525.0
    sec = (67310.54841 + (876600.0 * 3600.0 + 8640184.812866) * T
           + 0.093104 * T**2 - 6.2e-6 * T**3)
    return math.radians((sec % SECONDS_PER_DAY) / 240.0)


def _j2_rates(a, e, inc, n):
    p = a * (1.0 - e * e)
    k = 1.5 * J2 * (R_EQ / p) ** 2 * n
    ci = math.cos(inc)
    raan_dot = -k * ci
    argp_dot = 0.5 * k * (5.0 * ci * ci - 1.0)
    m_dot = 0.5 * k * math.sqrt(1.0 - e * e) * (3.0 * ci * ci - 1.0)
    return raan_dot, argp_dot, m_dot


def propagate_inertial(tle: TleRecord, dt: float, j2: bool = False):
    """Inertial (TEME-like) position and velocity ``dt`` seconds after the TLE epoch."""
    e = tle.eccentricity
    if not 0.0 <= e < 1.0:
        raise PropagationError(f"eccentricity {e} outside [0, 1)")
    n = tle.mean_motion * 2.0 * math.pi / SECONDS_PER_DAY
    a = (MU_EARTH / n**2) ** (1.0 / 3.0)
    inc = math.radians(tle.inclination)
    raan = math.radians(tle.raan)
    argp = math.radians(tle.arg_perigee)
    M = math.radians(tle.mean_anomaly) + n * dt
    if j2:
        raan_dot, argp_dot, m_dot = _j2_rates(a, e, inc, n)
        raan += raan_dot * dt
        argp += argp_dot * dt
        M += m_dot * dt

    E = solve_kepler(M, e)
    cosE, sinE = math.cos(E), math.sin(E)
    sq = math.sqrt(1.0 - e * e)
    # perifocal frame
    r_pf = np.array([a * (cosE - e), a * sq * sinE, 0.0])
    r = a * (1.0 - e * cosE)
    v_pf = np.array([-sinE, sq * cosE, 0.0]) * (math.sqrt(MU_EARTH * a) / r)

    cO, sO = math.cos(raan), math.sin(raan)
    cw, sw = math.cos(argp), math.sin(argp)
    ci, si = math.cos(inc), math.sin(inc)
    rot = np.array([
        [cO * cw - sO * sw * ci, -cO * sw - sO * cw * ci, sO * si],
        [sO * cw + cO * sw * ci, -sO * sw + cO * cw * ci, -cO * si],
        [sw * si, cw * si, ci],
    ])
    return rot @ r_pf, rot @ v_pf


def inertial_to_ecef(r, v, theta: float):
    """Rotate by Earth angle ``theta`` about +Z and remove the frame rotation from v."""
    c, s = math.cos(theta), math.sin(theta)
    rz = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    r_e = rz @ np.asarray(r, dtype=float)
    v_e = rz @ np.asarray(v, dtype=float) - np.cross([0.0, 0.0, OMEGA_EARTH], r_e)
    return r_e, v_e


def ecef_to_inertial_velocity(r_ecef, v_ecef):
    """Velocity in a non-rotating frame aligned with ECEF at the same instant."""
    return np.asarray(v_ecef) + np.cross([0.0, 0.0, OMEGA_EARTH], r_ecef)


def propagate(tle: TleRecord, t: float, epoch: float | None = None, j2: bool = True,
              horizon: float | None = None) -> EphemerisRecord:
    """ECEF state ``t`` seconds after the simulation epoch.

    ``epoch`` defaults to the TLE epoch.  The Earth rotation angle is GMST at
    the simulation epoch advanced at the constant rate ``OMEGA_EARTH``.
    """
    if epoch is None:
        epoch = tle.epoch
    if horizon is not None and not 0.0 <= t <= horizon:
        raise PropagationError(f"t={t} outside simulation horizon [0, {horizon}]")
    r, v = propagate_inertial(tle, epoch + t - tle.epoch, j2=j2)
    theta = gmst(epoch) + OMEGA_EARTH * t
    r_e, v_e = inertial_to_ecef(r, v, theta)
    return EphemerisRecord(tle.sat_id, float(t), r_e, v_e)


def propagate_many(tles: Sequence[TleRecord], times: Iterable[float], epoch=None, j2=True):
    """Ephemeris records for each satellite over ``times``, ordered by (sat, t)."""
    times = list(times)
    if epoch is None and tles:
        epoch = tles[0].epoch
    return [propagate(tle, t, epoch=epoch, j2=j2) for tle in tles for t in times]


def orbital_period(a_km: float) -> float:
    return 2.0 * math.pi * math.sqrt(a_km**3 / MU_EARTH)


def specific_energy(r, v) -> float:
    return 0.5 * float(np.dot(v, v)) - MU_EARTH / float(np.linalg.norm(r))


def plane_elements(position, velocity):
    """Inclination and Earth-fixed node longitude (deg) from an ECEF state.

    Node longitudes share the same GMST offset for every satellite at one
    instant, so differences between planes equal differences in RAAN.
    """
    r = np.asarray(position, dtype=float)
    h = np.cross(r, ecef_to_inertial_velocity(r, velocity))
    h = h / np.linalg.norm(h)
    inc = math.degrees(math.acos(max(-1.0, min(1.0, h[2]))))
    node = math.degrees(math.atan2(h[0], -h[1])) % 360.0
    return inc, node


def argument_of_latitude(position, velocity) -> float:
    """Angle (deg) from the ascending node to the satellite within its orbit plane."""
    r = np.asarray(position, dtype=float)
    h = np.cross(r, ecef_to_inertial_velocity(r, velocity))
    node = np.cross([0.0, 0.0, 1.0], h)
    nn = np.linalg.norm(node)
    node = np.array([1.0, 0.0, 0.0]) if nn < 1e-12 else node / nn
    cos_u = np.dot(node, r) / np.linalg.norm(r)
    sin_u = np.dot(np.cross(node, r), h) / (np.linalg.norm(r) * np.linalg.norm(h))
    return math.degrees(math.atan2(sin_u, cos_u)) % 360.0


# ---------------------------------------------------------------------------
# Earth-fixed geometry
# ---------------------------------------------------------------------------

def geodetic_to_ecef(lat, lon, alt_m=0.0):
    """WGS-84 geodetic (deg, deg, m) to ECEF km.  Accepts scalars or arrays.

    A :class:`GeodeticPoint` may be passed as the single argument.
    """
    if isinstance(lat, GeodeticPoint):
        lat, lon, alt_m = lat.lat, lat.lon, lat.alt
    phi = np.radians(lat)
    lam = np.radians(lon)
    h = np.asarray(alt_m, dtype=float) / 1000.0
    sphi = np.sin(phi)
    N = R_EQ / np.sqrt(1.0 - WGS84_E2 * sphi**2)
    x = (N + h) * np.cos(phi) * np.cos(lam)
    y = (N + h) * np.cos(phi) * np.sin(lam)
    z = (N * (1.0 - WGS84_E2) + h) * sphi
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def ecef_to_geodetic(xyz):
    """ECEF km to (lat deg, lon deg in [-180, 180), alt m).  Vectorised over leading axes."""
    xyz = np.asarray(xyz, dtype=float)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    p = np.hypot(x, y)
    lon = np.degrees(np.arctan2(y, x))
    lon = np.where(lon >= 180.0, lon - 360.0, lon)
    # Bowring's parametric-latitude iteration; converges to machine precision
    # in a handful of steps for altitudes well beyond LEO.
    phi = np.arctan2(z, p * (1.0 - WGS84_E2))
    for _ in range(10):
        beta = np.arctan2((1.0 - WGS84_F) * np.sin(phi), np.cos(phi))
        ep2 = WGS84_E2 / (1.0 - WGS84_E2)
        phi_new = np.arctan2(z + ep2 * WGS84_B * np.sin(beta) ** 3,
                             p - WGS84_E2 * R_EQ * np.cos(beta) ** 3)
        done = np.all(np.abs(phi_new - phi) < 1e-15)
        phi = phi_new
        if done:
            break
    sphi, cphi = np.sin(phi), np.cos(phi)
    N = R_EQ / np.sqrt(1.0 - WGS84_E2 * sphi**2)
    # blend of the two height formulas avoids the cos(phi)->0 singularity at the poles
    h = p * cphi + z * sphi - R_EQ**2 / N
    return np.degrees(phi), lon, h * 1000.0


def enu_basis(lat, lon):
    """Rows: east, north, up unit vectors (ECEF) at geodetic (lat, lon)."""
    phi, lam = np.radians(lat), np.radians(lon)
    sp, cp, sl, cl = np.sin(phi), np.cos(phi), np.sin(lam), np.cos(lam)
    east = np.stack(np.broadcast_arrays(-sl, cl, np.zeros_like(sl)), axis=-1)
    north = np.stack(np.broadcast_arrays(-sp * cl, -sp * sl, cp), axis=-1)
    up = np.stack(np.broadcast_arrays(cp * cl, cp * sl, sp), axis=-1)
    return east, north, up


def look_angles_array(sat, ground):
    """Vectorised look angles: returns (azimuth deg, elevation deg, slant range km)."""
    sat = np.asarray(sat, dtype=float)
    ground = np.asarray(ground, dtype=float)
    d = sat - ground
    rng = np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])
    if np.any(rng == 0.0):
        raise GeometryError("satellite and ground point coincide")
    lat, lon, _ = ecef_to_geodetic(ground)
    east, north, up = enu_basis(lat, lon)
    e = np.sum(d * east, axis=-1)
    n = np.sum(d * north, axis=-1)
    u = np.sum(d * up, axis=-1)
    el = np.degrees(np.arcsin(np.clip(u / rng, -1.0, 1.0)))
    az = np.degrees(np.arctan2(e, n)) % 360.0
    return az, el, rng


def look_angles(sat, ground) -> LookAngles:
    """Azimuth/elevation in the ground point's ENU frame and slant range ||p_s - p_g||."""
    az, el, rng = look_angles_array(sat, ground)
    return LookAngles(float(az), float(el), float(rng))


def doppler_shift(sat_pos, sat_vel, ground, f_c: float):
    """(f_c / c) * v_s . u with u the unit vector from satellite to ground.

    Positive when the satellite approaches the ground point.  Vectorised over
    ``ground``.
    """
    if f_c <= 0:
        raise GeometryError("carrier frequency must be positive")
    d = np.asarray(ground, dtype=float) - np.asarray(sat_pos, dtype=float)
    rng = np.linalg.norm(d, axis=-1)
    if np.any(rng == 0.0):
        raise GeometryError("zero slant range")
    u = d / rng[..., None]
    v_ms = np.asarray(sat_vel, dtype=float) * 1000.0
    out = f_c / C_LIGHT * np.sum(v_ms * u, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Ephemeris CSV
# ---------------------------------------------------------------------------

def write_ephemeris(records: Iterable[EphemerisRecord], path) -> None:
    """Write records as CSV with round-trip-exact (17 significant digit) floats."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPHEMERIS_HEADER)
        for rec in records:
            vals = [rec.t, *rec.position, *rec.velocity]
            w.writerow([str(int(rec.sat_id))] + [repr(float(x)) for x in vals])


def read_ephemeris(path) -> list[EphemerisRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FileFormatError(f"{path}: empty file, expected header") from None
        if tuple(h.strip() for h in header) != EPHEMERIS_HEADER:
            raise FileFormatError(f"{path}: malformed header {header!r}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(EPHEMERIS_HEADER):
                raise FileFormatError(f"{path}:{lineno}: expected 8 fields, got {len(row)}")
            try:
                vals = [float(x) for x in row[1:]]
                out.append(EphemerisRecord(int(row[0]), vals[0], np.array(vals[1:4]), np.array(vals[4:7])))
            except ValueError:
                raise FileFormatError(f"{path}:{lineno}: non-numeric field") from None
    return out


def group_by_time(records: Iterable[EphemerisRecord], decimals: int = 6):
    """Map rounded time -> list of records at that time, sorted by sat_id."""
    slots: dict[float, list[EphemerisRecord]] = {}
    for rec in records:
        slots.setdefault(round(rec.t, decimals), []).append(rec)
    for recs in slots.values():
        recs.sort(key=lambda r: r.sat_id)
    return dict(sorted(slots.items()))


def write_tle(records: Sequence[TleRecord], path=None) -> str:
    """Format records as standard 3-line element sets (used to build fixtures)."""
    out = []
    for rec in records:
        dt = datetime.fromtimestamp(rec.epoch, tz=timezone.utc)
        year2 = dt.year % 100
        start = datetime(dt.year, 1, 1, tzinfo=timezone.utc)
        day = (dt - start).total_seconds() / SECONDS_PER_DAY + 1.0
        if rec.bstar == 0.0:
            bstar = " 00000-0"
        else:
            exp = math.floor(math.log10(abs(rec.bstar))) + 1
            mant = round(abs(rec.bstar) / 10.0**exp * 1e5)
            if mant >= 100000:
                mant //= 10
                exp += 1
            bstar = f"{'-' if rec.bstar < 0 else ' '}{mant:05d}{'-' if exp < 0 else '+'}{abs(exp)}"
        l1 = f"1 {rec.sat_id:05d}U 00000A   {year2:02d}{day:012.8f}  .00000000  00000-0 {bstar} 0  999"
        ecc = f"{rec.eccentricity:.7f}"[2:]
        l2 = (f"2 {rec.sat_id:05d} {rec.inclination:8.4f} {rec.raan:8.4f} {ecc} "
              f"{rec.arg_perigee:8.4f} {rec.mean_anomaly:8.4f} {rec.mean_motion:11.8f}    0")
        l1 = l1[:68] + str(tle_checksum(l1))
        l2 = l2[:68] + str(tle_checksum(l2))
        out.extend([rec.name or f"SAT-{rec.sat_id}", l1, l2])
    text = "\n".join(out) + ("\n" if out else "")
    if path is not None:
        Path(path).write_text(text)
    return text
