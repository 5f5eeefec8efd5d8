import math

import numpy as np
import pytest

from gnssfilter import frames, models
from gnssfilter.data import SatObservation
from gnssfilter.errors import MissingCorrection
from gnssfilter.frames import SPEED_OF_LIGHT, GeodeticPos


# --- independent straight-line oracles --------------------------------------

def saastamoinen_oracle(lat, hgt, el, P, T, RH):
    pres = P * (1 - 2.2557e-5 * hgt) ** 5.2568
    temp = T - 6.5e-3 * hgt
    e = 6.108 * RH * math.exp((17.15 * temp - 4684.0) / (temp - 38.45))
    z = math.pi / 2 - el
    dry = 0.0022768 * pres / (1 - 0.00266 * math.cos(2 * lat)
                              - 0.00028 * hgt / 1e3) / math.cos(z)
    wet = 0.002277 * (1255.0 / temp + 0.05) * e / math.cos(z)
    return dry + wet


def klobuchar_oracle(lat, lon, el, az, tod, alpha, beta):
    c = 299792458.0
    el_sc = el / math.pi
    psi = 0.0137 / (el_sc + 0.11) - 0.022
    phi = lat / math.pi + psi * math.cos(az)
    phi = max(-0.416, min(0.416, phi))
    lam = lon / math.pi + psi * math.sin(az) / math.cos(phi * math.pi)
    phim = phi + 0.064 * math.cos((lam - 1.617) * math.pi)
    t = 43200.0 * lam + tod
    t -= math.floor(t / 86400.0) * 86400.0
    slant = 1.0 + 16.0 * (0.53 - el_sc) ** 3
    amp = max(sum(a * phim ** i for i, a in enumerate(alpha)), 0.0)
    per = max(sum(b * phim ** i for i, b in enumerate(beta)), 72000.0)
    x = 2 * math.pi * (t - 50400.0) / per
    delay = 5e-9 + amp * (1 - x * x / 2 + x ** 4 / 24) if abs(x) < 1.57 else 5e-9
    return c * slant * delay


STANDARD = GeodeticPos(0.0, 0.0, 0.0)


def test_saastamoinen_zenith():
    d = models.saastamoinen_delay(STANDARD, math.pi / 2)
    assert d == pytest.approx(2.4162072030856203, abs=1e-12)
    assert 2.2 < d < 2.5
    assert d == pytest.approx(
        saastamoinen_oracle(0.0, 0.0, math.pi / 2, 1013.25, 291.15, 0.5), abs=1e-12)


def test_saastamoinen_30deg_doubles_zenith():
    z = models.saastamoinen_delay(STANDARD, math.pi / 2)
    d = models.saastamoinen_delay(STANDARD, math.radians(30.0))
    assert d == pytest.approx(2.0 * z, rel=1e-12)
    assert d == pytest.approx(
        saastamoinen_oracle(0.0, 0.0, math.radians(30), 1013.25, 291.15, 0.5),
        abs=1e-12)


def test_saastamoinen_matches_oracle_randomly():
    rng = np.random.default_rng(2)
    for _ in range(200):
        lat = rng.uniform(-1.4, 1.4)
        hgt = rng.uniform(0.0, 3000.0)
        el = rng.uniform(math.radians(5.0), math.pi / 2)
        p = rng.uniform(900.0, 1050.0)
        t = rng.uniform(250.0, 310.0)
        rh = rng.uniform(0.0, 1.0)
        got = models.saastamoinen_delay(GeodeticPos(lat, 0.0, hgt), el, p, t, rh)
        assert got == pytest.approx(saastamoinen_oracle(lat, hgt, el, p, t, rh),
                                    rel=1e-12)
        assert got > 0.0


def test_saastamoinen_monotone_in_elevation():
    els = np.linspace(math.radians(5.0), math.pi / 2, 60)
    delays = [models.saastamoinen_delay(STANDARD, el) for el in els]
    assert all(a > b for a, b in zip(delays, delays[1:]))


NIGHT_ARGS = dict(rx=GeodeticPos(math.radians(40.0), math.radians(-100.0), 0.0),
                  gps_tod=34800.0)


def test_klobuchar_night_zenith_floor():
    d = models.klobuchar_delay(NIGHT_ARGS["rx"], math.pi / 2, 0.0,
                               NIGHT_ARGS["gps_tod"],
                               models.DEFAULT_KLOBUCHAR_ALPHA,
                               models.DEFAULT_KLOBUCHAR_BETA)
    assert d == pytest.approx(1.49960984170928, abs=1e-12)
    # c * 5 ns floor times the (almost unity) zenith slant factor
    assert d == pytest.approx(SPEED_OF_LIGHT * 5e-9, abs=2e-3)


def test_klobuchar_zero_coefficients_same_floor():
    d = models.klobuchar_delay(NIGHT_ARGS["rx"], math.pi / 2, 0.0,
                               NIGHT_ARGS["gps_tod"],
                               (0.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0, 0.0))
    assert d == pytest.approx(1.49960984170928, abs=1e-12)


def test_klobuchar_daytime_value():
    d = models.klobuchar_delay(NIGHT_ARGS["rx"], math.radians(20.0),
                               math.radians(210.0), 68400.0 + 24000.0,
                               models.DEFAULT_KLOBUCHAR_ALPHA,
                               models.DEFAULT_KLOBUCHAR_BETA)
    assert d == pytest.approx(16.858980140857238, abs=1e-6)


def test_klobuchar_matches_oracle_randomly():
    rng = np.random.default_rng(8)
    for _ in range(300):
        lat = rng.uniform(-1.2, 1.2)
        lon = rng.uniform(-math.pi, math.pi)
        el = rng.uniform(math.radians(5.0), math.pi / 2)
        az = rng.uniform(-math.pi, math.pi)
        tod = rng.uniform(0.0, 86400.0)
        alpha = tuple(rng.uniform(-2e-7, 2e-7, size=4))
        beta = tuple(rng.uniform(-2e5, 2e5, size=4))
        got = models.klobuchar_delay(GeodeticPos(lat, lon, 0.0), el, az, tod,
                                     alpha, beta)
        want = klobuchar_oracle(lat, lon, el, az, tod, alpha, beta)
        assert got == pytest.approx(want, abs=1e-9)
        assert got > 0.0


def test_klobuchar_monotone_in_elevation():
    # checked in the night branch, where the delay is the floor times the
    # slant factor; by day the pierce point moves with elevation and strict
    # monotonicity is not a property of the broadcast algorithm
    els = np.linspace(math.radians(5.0), math.pi / 2, 50)
    delays = [models.klobuchar_delay(NIGHT_ARGS["rx"], el, 0.5,
                                     NIGHT_ARGS["gps_tod"],
                                     models.DEFAULT_KLOBUCHAR_ALPHA,
                                     models.DEFAULT_KLOBUCHAR_BETA)
              for el in els]
    assert all(a > b for a, b in zip(delays, delays[1:]))


# --- corrected pseudorange ---------------------------------------------------

def make_obs(**overrides):
    base = dict(system="GPS", sat_id=1, pseudorange=2.2e7, snr=45.0,
                sat_pos=np.array([2.6e7, 0.0, 0.0]), sat_clock_bias=0.0,
                tgd=0.0, iono_delay=0.0, tropo_delay=0.0)
    base.update(overrides)
    return SatObservation(**base)


def test_identity_when_all_terms_zero():
    cfg = models.CorrectionConfig()
    obs = make_obs()
    assert models.corrected_pseudorange(obs, STANDARD, 0.0, cfg) == obs.pseudorange


def test_satellite_clock_term():
    cfg = models.CorrectionConfig()
    obs = make_obs(sat_clock_bias=1e-6)
    corrected = models.corrected_pseudorange(obs, STANDARD, 0.0, cfg)
    # 1e-6 absolute: the 2.2e7 m pseudorange quantizes the sum at ~4e-9 m
    assert corrected - obs.pseudorange == pytest.approx(299.792458, abs=1e-6)


def test_affine_in_each_term():
    # perturbing one correction input changes the output by exactly +-1 times
    cfg = models.CorrectionConfig()
    base = models.corrected_pseudorange(make_obs(), STANDARD, 0.0, cfg)
    assert models.corrected_pseudorange(
        make_obs(pseudorange=2.2e7 + 5.0), STANDARD, 0.0, cfg) - base == pytest.approx(5.0)
    assert models.corrected_pseudorange(
        make_obs(iono_delay=3.0), STANDARD, 0.0, cfg) - base == pytest.approx(-3.0)
    assert models.corrected_pseudorange(
        make_obs(tropo_delay=2.0), STANDARD, 0.0, cfg) - base == pytest.approx(-2.0)
    assert models.corrected_pseudorange(
        make_obs(tgd=1e-8), STANDARD, 0.0, cfg) - base == pytest.approx(
            -SPEED_OF_LIGHT * 1e-8)


def test_missing_correction_raises():
    cfg = models.CorrectionConfig(use_saastamoinen=False, use_klobuchar=False)
    with pytest.raises(MissingCorrection):
        models.corrected_pseudorange(make_obs(tropo_delay=None), STANDARD, 0.0, cfg)
    with pytest.raises(MissingCorrection):
        models.corrected_pseudorange(make_obs(iono_delay=None), STANDARD, 0.0, cfg)


def test_model_fallback_when_fields_absent():
    cfg = models.CorrectionConfig()
    rx = GeodeticPos(math.radians(40.0), math.radians(116.0), 50.0)
    rx_ecef = frames.geodetic_to_ecef(rx)
    sat_pos = frames.enu_to_ecef([0.0, 1.5e7, 2.0e7], rx)
    obs = make_obs(sat_pos=sat_pos, iono_delay=None, tropo_delay=None)
    el, az = frames.elevation_azimuth(rx_ecef, sat_pos, rx)
    expected = (obs.pseudorange
                - models.saastamoinen_delay(rx, el, cfg.pressure_hpa,
                                            cfg.temperature_k, cfg.humidity)
                - models.klobuchar_delay(rx, el, az, 4000.0,
                                         cfg.klobuchar_alpha, cfg.klobuchar_beta))
    got = models.corrected_pseudorange(obs, rx, 4000.0, cfg)
    assert got == pytest.approx(expected, abs=1e-9)
