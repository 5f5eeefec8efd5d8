"""Pseudorange corrections: satellite clock, TGD, troposphere, ionosphere.

The troposphere uses the canonical Saastamoinen zenith model with a
1/sin(elevation) mapping; the ionosphere uses the canonical Klobuchar
broadcast algorithm.  Multipath and receiver hardware delay are left in
the measurement on purpose: they are the unmodeled errors the filter is
expected to absorb.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import frames
from .errors import MissingCorrection
from .frames import SPEED_OF_LIGHT, GeodeticPos

# Sample broadcast Klobuchar coefficients (mid-latitude day, textbook values).
DEFAULT_KLOBUCHAR_ALPHA = (0.3820e-7, 0.1490e-7, -0.1790e-6, 0.0)
DEFAULT_KLOBUCHAR_BETA = (0.1430e6, 0.0, -0.3280e6, 0.1130e6)


@dataclass
class CorrectionConfig:
    use_saastamoinen: bool = True
    use_klobuchar: bool = True
    klobuchar_alpha: tuple = DEFAULT_KLOBUCHAR_ALPHA
    klobuchar_beta: tuple = DEFAULT_KLOBUCHAR_BETA
    pressure_hpa: float = 1013.25
    temperature_k: float = 291.15
    humidity: float = 0.5

    def validate(self):
        if len(self.klobuchar_alpha) != 4 or len(self.klobuchar_beta) != 4:
            raise ValueError("Klobuchar coefficient vectors must have length 4")
        if not (800.0 < self.pressure_hpa < 1100.0):
            raise ValueError(f"pressure {self.pressure_hpa} hPa implausible")
        if not (200.0 < self.temperature_k < 330.0):
            raise ValueError(f"temperature {self.temperature_k} K implausible")


def saastamoinen_delay(rx: GeodeticPos, elevation: float,
                       pressure_hpa: float = 1013.25,
                       temperature_k: float = 291.15,
                       humidity: float = 0.5) -> float:
    """Slant tropospheric delay [m]: Saastamoinen zenith terms / sin(el).

    Sea-level pressure/temperature/humidity are reduced to the receiver
    height with the standard lapse model.  Elevation is clamped to 0.01 rad
    so the mapping never blows up; below ~5 deg the value is increasingly
    unreliable but still monotone in elevation.
    """
    el = max(float(elevation), 0.01)
    hgt = min(max(rx.height, 0.0), 1e4)
    pres = pressure_hpa * (1.0 - 2.2557e-5 * hgt) ** 5.2568
    temp = temperature_k - 6.5e-3 * hgt
    e = 6.108 * humidity * math.exp((17.15 * temp - 4684.0) / (temp - 38.45))
    z = math.pi / 2.0 - el
    dry = 0.0022768 * pres / (1.0 - 0.00266 * math.cos(2.0 * rx.lat)
                              - 0.00028 * hgt / 1e3) / math.cos(z)
    wet = 0.002277 * (1255.0 / temp + 0.05) * e / math.cos(z)
    return dry + wet


def klobuchar_delay(rx: GeodeticPos, elevation: float, azimuth: float,
                    gps_tod: float, alpha, beta) -> float:
    """Slant ionospheric delay [m] from the broadcast Klobuchar algorithm.

    ``gps_tod`` is GPS time of day in seconds.  The algorithm works in
    semicircles; its nighttime floor is a 5 ns vertical delay times the
    slant factor.
    """
    el_sc = elevation / math.pi
    psi = 0.0137 / (el_sc + 0.11) - 0.022
    phi = rx.lat / math.pi + psi * math.cos(azimuth)
    phi = max(-0.416, min(0.416, phi))
    lam = rx.lon / math.pi + psi * math.sin(azimuth) / math.cos(phi * math.pi)
    phi_m = phi + 0.064 * math.cos((lam - 1.617) * math.pi)
    t = 43200.0 * lam + gps_tod
    t -= math.floor(t / 86400.0) * 86400.0
    slant = 1.0 + 16.0 * (0.53 - el_sc) ** 3
    h = (1.0, phi_m, phi_m ** 2, phi_m ** 3)
    amp = max(sum(a * hi for a, hi in zip(alpha, h)), 0.0)
    per = max(sum(b * hi for b, hi in zip(beta, h)), 72000.0)
    x = 2.0 * math.pi * (t - 50400.0) / per
    if abs(x) < 1.57:
        delay = 5e-9 + amp * (1.0 - x * x / 2.0 + x ** 4 / 24.0)
    else:
        delay = 5e-9
    return SPEED_OF_LIGHT * slant * delay


def corrected_pseudorange(obs, rx: GeodeticPos, time_of_day: float,
                          cfg: CorrectionConfig) -> float:
    """Apply satellite clock, TGD, troposphere, and ionosphere corrections.

    Returns P + c*dt_sat - c*tgd - T - I, leaving geometry, receiver clock,
    inter-system bias, multipath, and noise in the measurement.  Delay
    fields on the observation take precedence over the models; if a model
    is disabled and the field is absent, MissingCorrection is raised.
    """
    el = az = None
    if obs.tropo_delay is not None:
        tropo = obs.tropo_delay
    elif cfg.use_saastamoinen:
        el, az = frames.elevation_azimuth(frames.geodetic_to_ecef(rx), obs.sat_pos, rx)
        tropo = saastamoinen_delay(rx, el, cfg.pressure_hpa, cfg.temperature_k,
                                   cfg.humidity)
    else:
        raise MissingCorrection(f"no tropospheric delay for {obs.system}:{obs.sat_id}")
    if obs.iono_delay is not None:
        iono = obs.iono_delay
    elif cfg.use_klobuchar:
        if el is None:
            el, az = frames.elevation_azimuth(frames.geodetic_to_ecef(rx),
                                              obs.sat_pos, rx)
        iono = klobuchar_delay(rx, el, az, time_of_day,
                               cfg.klobuchar_alpha, cfg.klobuchar_beta)
    else:
        raise MissingCorrection(f"no ionospheric delay for {obs.system}:{obs.sat_id}")
    return (obs.pseudorange
            + SPEED_OF_LIGHT * obs.sat_clock_bias
            - SPEED_OF_LIGHT * obs.tgd
            - tropo - iono)


def corrected_pseudoranges(epoch, rx: GeodeticPos, cfg: CorrectionConfig) -> np.ndarray:
    """Vector of corrected pseudoranges for every observation in the epoch.

    Time of day for the Klobuchar model is the epoch time modulo 86400 s.
    """
    tod = float(epoch.t) % 86400.0
    return np.array([corrected_pseudorange(o, rx, tod, cfg)
                     for o in epoch.observations])
