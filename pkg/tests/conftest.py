"""Shared helpers: hand-built satellite geometries with exact pseudoranges."""

import math

import numpy as np
import pytest

from gnssfilter import frames
from gnssfilter.data import EpochRecord, SatObservation, ISB_SYSTEMS

SHELL_RADIUS = 26.56e6  # [m] geocentric, GPS-like


def place_satellite(rx_ecef, rx_geodetic, elevation, azimuth,
                    shell_radius=SHELL_RADIUS):
    """ECEF position of a satellite seen at (elevation, azimuth) from rx.

    The satellite sits where the ray from the receiver crosses the
    geocentric sphere of the given radius.
    """
    u_enu = np.array([
        math.cos(elevation) * math.sin(azimuth),
        math.cos(elevation) * math.cos(azimuth),
        math.sin(elevation),
    ])
    u_ecef = frames.enu_rotation(rx_geodetic).T @ u_enu
    # solve |rx + s*u| = shell_radius for s > 0
    b = float(rx_ecef @ u_ecef)
    c = float(rx_ecef @ rx_ecef) - shell_radius ** 2
    s = -b + math.sqrt(b * b - c)
    return rx_ecef + s * u_ecef


def build_epoch(rx_geodetic, sats, clock_bias_m=0.0, isb_m=(0.0, 0.0, 0.0),
                t=0.0, truth_included=True, snr=45.0):
    """Noise-free epoch: pseudorange = range + clock + ISB (+ per-sat bias).

    ``sats`` is a list of (system, sat_id, elevation, azimuth[, extra_bias_m]).
    Tropo/iono fields are present and zero so corrections are a no-op.
    """
    rx_ecef = frames.geodetic_to_ecef(rx_geodetic)
    observations = []
    for spec in sats:
        system, sat_id, ela, aza = spec[:4]
        bias = spec[4] if len(spec) > 4 else 0.0
        sat_pos = place_satellite(rx_ecef, rx_geodetic, ela, aza)
        rng = np.linalg.norm(sat_pos - rx_ecef)
        isb = 0.0
        if system != "GPS":
            isb = isb_m[ISB_SYSTEMS.index(system)]
        observations.append(SatObservation(
            system=system, sat_id=sat_id,
            pseudorange=float(rng + clock_bias_m + isb + bias),
            snr=snr, sat_pos=sat_pos,
            sat_clock_bias=0.0, tgd=0.0,
            iono_delay=0.0, tropo_delay=0.0,
        ))
    return EpochRecord(t=t, observations=observations,
                       truth=rx_ecef if truth_included else None,
                       truth_clock=clock_bias_m / frames.SPEED_OF_LIGHT
                       if truth_included else None)


def spread_sats(n, rng=None, el_range=(math.radians(15), math.radians(80)),
                systems=("GPS",)):
    """n satellite specs with well-spread azimuths and randomized elevations."""
    rng = rng or np.random.default_rng(0)
    specs = []
    for i in range(n):
        az = 2.0 * math.pi * i / n + rng.uniform(-0.1, 0.1)
        el = rng.uniform(*el_range)
        system = systems[i % len(systems)]
        specs.append((system, i + 1, el, az))
    return specs


@pytest.fixture
def rx_geodetic():
    return frames.GeodeticPos(math.radians(40.0), math.radians(116.3), 60.0)
