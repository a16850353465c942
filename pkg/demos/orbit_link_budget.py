"""Follow one 550 km satellite across a ground station and print the link budget terms.

Run:  python3 demos/orbit_link_budget.py
"""
import numpy as np

from ntn_twin import orbital
from ntn_twin.physics_tensor import RainModelParams, fspl_db, rain_attenuation_db
from ntn_twin.scenarios import overhead_pass

F_C = 12e9
STATION = (10.0, 100.0)

# a pass that puts the satellite at zenith 300 s into the run
tle = overhead_pass(STATION, 300.0)
a = tle.semi_major_axis
print(f"semi-major axis {a:.1f} km, period {orbital.orbital_period(a):.1f} s")

ground = orbital.geodetic_to_ecef(*STATION)
rain = RainModelParams()
print(f"{'t [s]':>6} {'el [deg]':>9} {'range [km]':>11} {'FSPL [dB]':>10} {'Doppler [kHz]':>14} {'rain 10mm/h [dB]':>17}")
for t in np.arange(0.0, 601.0, 60.0):
    eph = orbital.propagate(tle, float(t))
    look = orbital.look_angles(eph.position, ground)
    if look.elevation <= 0:
        print(f"{t:6.0f}  below horizon")
        continue
    dop = orbital.doppler_shift(eph.position, eph.velocity, ground, F_C)
    att = rain_attenuation_db(10.0, look.elevation, rain)
    print(f"{t:6.0f} {look.elevation:9.2f} {look.slant_range:11.1f} {fspl_db(look.slant_range, F_C):10.2f} "
          f"{dop / 1e3:14.1f} {att:17.3f}")

# energy is conserved by the two-body part of the propagator
r0, v0 = orbital.propagate_inertial(tle, 0.0, j2=False)
r1, v1 = orbital.propagate_inertial(tle, 8 * 3600.0, j2=False)
e0, e1 = orbital.specific_energy(r0, v0), orbital.specific_energy(r1, v1)
print(f"relative energy drift over 8 h: {abs(e1 - e0) / abs(e0):.2e}")
