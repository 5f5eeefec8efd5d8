"""Coordinate frames and satellite geometry.

ECEF <-> geodetic <-> local ENU transforms on the WGS-84 ellipsoid, plus
satellite elevation/azimuth as seen from a receiver.  All angles are in
radians, all distances in meters.

Conventions:
  - Geodetic latitude in [-pi/2, pi/2], longitude in (-pi, pi].
  - ENU is anchored at a geodetic reference point: x=East, y=North, z=Up.
  - Azimuth is measured clockwise from North (atan2(east, north)), so a
    satellite due East has azimuth +pi/2.  At zenith the azimuth is
    reported as 0 by convention.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import NearSingularity

# WGS-84 defining constants
WGS84_A = 6378137.0                # semi-major axis [m]
WGS84_F = 1.0 / 298.257223563      # flattening
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)   # first eccentricity squared
SPEED_OF_LIGHT = 299792458.0       # [m/s], exact


@dataclass(frozen=True)
class GeodeticPos:
    """Geodetic position: latitude/longitude [rad], ellipsoidal height [m]."""

    lat: float
    lon: float
    height: float


def geodetic_to_ecef(g: GeodeticPos) -> np.ndarray:
    """Forward WGS-84 transform to an ECEF position vector (3,)."""
    sin_lat = math.sin(g.lat)
    cos_lat = math.cos(g.lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    x = (n + g.height) * cos_lat * math.cos(g.lon)
    y = (n + g.height) * cos_lat * math.sin(g.lon)
    z = (n * (1.0 - WGS84_E2) + g.height) * sin_lat
    return np.array([x, y, z])


def ecef_to_geodetic(p) -> GeodeticPos:
    """Invert :func:`geodetic_to_ecef` by iterative latitude refinement.

    Converges to 1e-12 rad well within 10 iterations everywhere off the
    polar axis.  On the axis (sqrt(x^2+y^2) < 1e-6 m) the longitude is
    undefined and reported as 0.
    """
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    rho = math.hypot(x, y)
    if rho < 1e-6:
        # polar axis: latitude +-pi/2, height above the polar radius
        lat = math.copysign(math.pi / 2.0, z) if z != 0.0 else 0.0
        return GeodeticPos(lat, 0.0, abs(z) - WGS84_B)
    lon = math.atan2(y, x)
    lat = math.atan2(z, rho * (1.0 - WGS84_E2))
    # polish to machine precision; the update contracts fast enough that the
    # 1e-12 rad tolerance is passed by iteration 3-4 and the fixed point is
    # reached well within the 10-iteration budget
    for _ in range(10):
        sin_lat = math.sin(lat)
        w = math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        n = WGS84_A / w
        height = rho * math.cos(lat) + z * sin_lat - WGS84_A * w
        new_lat = math.atan2(z, rho * (1.0 - WGS84_E2 * n / (n + height)))
        if abs(new_lat - lat) < 1e-15:
            lat = new_lat
            break
        lat = new_lat
    sin_lat = math.sin(lat)
    w = math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    height = rho * math.cos(lat) + z * sin_lat - WGS84_A * w
    # one Newton polish in the local frame: removes the last ~1e-9 m of
    # rounding so forward(inverse(p)) reproduces p to ~1e-12 m
    guess = GeodeticPos(lat, lon, height)
    delta = enu_rotation(guess) @ (np.array([x, y, z]) - geodetic_to_ecef(guess))
    n = WGS84_A / w
    m = WGS84_A * (1.0 - WGS84_E2) / w ** 3
    lat += delta[1] / (m + height)
    lon += delta[0] / ((n + height) * math.cos(lat))
    height += delta[2]
    return GeodeticPos(lat, lon, height)


def enu_rotation(ref: GeodeticPos) -> np.ndarray:
    """Rotation matrix mapping ECEF deltas to ENU at ``ref`` (rows E, N, U)."""
    sin_lat, cos_lat = math.sin(ref.lat), math.cos(ref.lat)
    sin_lon, cos_lon = math.sin(ref.lon), math.cos(ref.lon)
    return np.array([
        [-sin_lon, cos_lon, 0.0],
        [-sin_lat * cos_lon, -sin_lat * sin_lon, cos_lat],
        [cos_lat * cos_lon, cos_lat * sin_lon, sin_lat],
    ])


def ecef_to_enu(p, ref: GeodeticPos) -> np.ndarray:
    """ECEF position -> ENU vector relative to the reference point."""
    return enu_rotation(ref) @ (np.asarray(p, dtype=float) - geodetic_to_ecef(ref))


def enu_to_ecef(enu, ref: GeodeticPos) -> np.ndarray:
    """ENU vector relative to ``ref`` -> ECEF position."""
    return geodetic_to_ecef(ref) + enu_rotation(ref).T @ np.asarray(enu, dtype=float)


def elevation_azimuth(rx, sat, rx_geodetic: GeodeticPos | None = None):
    """Elevation and azimuth of ``sat`` as seen from receiver ``rx`` (both ECEF).

    Returns (elevation, azimuth) in radians with elevation in [-pi/2, pi/2]
    and azimuth in (-pi, pi] measured clockwise from North.  ``rx_geodetic``
    may be supplied to avoid recomputing the geodetic conversion.

    Range must exceed 1 m; at zenith (elevation within 1e-9 of pi/2) the
    azimuth is degenerate and reported as 0.
    """
    rx = np.asarray(rx, dtype=float)
    sat = np.asarray(sat, dtype=float)
    if rx_geodetic is None:
        rx_geodetic = ecef_to_geodetic(rx)
    los = enu_rotation(rx_geodetic) @ (sat - rx)
    rng = float(np.linalg.norm(los))
    if rng <= 1.0:
        raise NearSingularity(f"range {rng:.3e} m too small for elevation/azimuth")
    elevation = math.asin(max(-1.0, min(1.0, los[2] / rng)))
    if elevation > math.pi / 2.0 - 1e-9:
        return elevation, 0.0
    azimuth = math.atan2(los[0], los[1])
    return elevation, azimuth
