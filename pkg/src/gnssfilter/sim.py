"""Synthetic urban-scenario generator with a labeled error budget.

Satellites live on a geocentric shell and drift slowly in azimuth/elevation;
the receiver follows piecewise constant-velocity waypoints.  Each pseudorange
is assembled term by term (clock, inter-system bias, satellite clock/TGD,
troposphere, ionosphere, NLOS bias, elevation-dependent noise) and every
injected term is recorded, so tests can recover each one exactly.  NLOS
events start with a per-satellite-epoch probability (boosted at low
elevation), hold a constant bias for an exponential dwell, and depress SNR.
"""

from dataclasses import dataclass, field
import json
import math

import numpy as np

from . import frames, models
from .data import (DatasetManifest, EpochRecord, SatObservation, SYSTEMS,
                   ISB_SYSTEMS, _fmt)
from .errors import ConfigError, FormatError
from .frames import SPEED_OF_LIGHT, GeodeticPos

TRUTH_FORMAT_TAG = "gnss-truth"
TRUTH_FORMAT_VERSION = 1

_MIN_EL = math.radians(8.0)
_MAX_EL = math.radians(85.0)


@dataclass
class NlosConfig:
    prob: float = 0.0                 # per-satellite-epoch start probability
    bias_min: float = 5.0             # [m]
    bias_max: float = 30.0            # [m]
    snr_drop_db: float = 12.0
    dwell_mean_s: float = 10.0        # exponential dwell; 0 = single epoch
    low_elev_multiplier: float = 3.0  # start probability boost below threshold
    low_elev_threshold: float = math.radians(30.0)


@dataclass
class ErrorBudget:
    noise_sigma: float = 0.8          # [m] at zenith; 0 disables noise
    elevation_weighted_noise: bool = True
    clock_bias: float = 100.0         # [m] truth at t=0
    clock_drift: float = 0.1          # [m/s] truth
    isb: tuple = (3.0, -2.0, 5.0)     # [m] (BDS, GAL, GLO) truths
    sat_clock: bool = True            # draw per-satellite clock bias and TGD
    tropo: bool = True
    iono: bool = True
    dropout_prob: float = 0.0         # per-satellite-epoch missing observation
    nlos: NlosConfig = field(default_factory=NlosConfig)


@dataclass
class ScenarioConfig:
    seed: int = 0
    duration: float = 600.0           # [s]
    rate: float = 1.0                 # [Hz], 1 or 10
    constellation: dict = field(default_factory=lambda: {
        "GPS": 8, "BDS": 6, "GAL": 5, "GLO": 5})
    shell_radius: float = 26.56e6     # [m] geocentric
    # piecewise constant-velocity waypoints: (time [s], geodetic position)
    waypoints: list = field(default_factory=lambda: [
        (0.0, GeodeticPos(math.radians(40.0), math.radians(116.3), 60.0)),
    ])
    budget: ErrorBudget = field(default_factory=ErrorBudget)
    name: str = "scenario"

    def validate(self):
        if self.rate not in (1.0, 10.0):
            raise ConfigError(f"rate must be 1 or 10 Hz, got {self.rate}")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if any(s not in SYSTEMS for s in self.constellation):
            raise ConfigError(f"unknown constellation in {self.constellation}")
        if sum(self.constellation.values()) < 4:
            raise ConfigError("fewer than 4 satellites configured")
        if not self.waypoints:
            raise ConfigError("at least one waypoint required")
        if any(t1 >= t2 for (t1, _), (t2, _) in zip(self.waypoints,
                                                    self.waypoints[1:])):
            raise ConfigError("waypoint times must be strictly increasing")
        n = self.budget.nlos
        if not (0.0 <= n.prob <= 1.0):
            raise ConfigError(f"NLOS probability {n.prob} outside [0, 1]")
        if not (0.0 < n.bias_min <= n.bias_max):
            raise ConfigError("NLOS bias range must be positive")


def zero_budget() -> ErrorBudget:
    """Only the estimated states (clock, drift, ISB) remain injected."""
    return ErrorBudget(noise_sigma=0.0, sat_clock=False, tropo=False,
                       iono=False, dropout_prob=0.0,
                       nlos=NlosConfig(prob=0.0))


@dataclass
class TruthEpoch:
    t: float
    pos: np.ndarray            # ECEF [m]
    vel: np.ndarray            # ECEF [m/s]
    clock: float               # [m]
    clock_drift: float         # [m/s]
    isb: np.ndarray            # (BDS, GAL, GLO) [m]
    nlos: dict                 # (system, sat_id) -> bias [m], biased sats only


class _Trajectory:
    """Linear ECEF interpolation between waypoints, clamped at the ends."""

    def __init__(self, waypoints):
        self.times = np.array([t for t, _ in waypoints])
        self.points = np.array([frames.geodetic_to_ecef(g)
                                for _, g in waypoints])

    def state(self, t):
        if len(self.times) == 1 or t <= self.times[0]:
            return self.points[0].copy(), np.zeros(3)
        if t >= self.times[-1]:
            return self.points[-1].copy(), np.zeros(3)
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        t0, t1 = self.times[i], self.times[i + 1]
        vel = (self.points[i + 1] - self.points[i]) / (t1 - t0)
        return self.points[i] + vel * (t - t0), vel


class _Satellite:
    def __init__(self, system, sat_id, az, el, az_rate, el_rate,
                 clock_bias, tgd):
        self.system = system
        self.sat_id = sat_id
        self.az = az
        self.el = el
        self.az_rate = az_rate
        self.el_rate = el_rate
        self.clock_bias = clock_bias
        self.tgd = tgd
        self.nlos_left = 0       # epochs remaining in the current event
        self.nlos_bias = 0.0

    def step(self, dt):
        self.az = math.remainder(self.az + self.az_rate * dt, 2.0 * math.pi)
        self.el += self.el_rate * dt
        if self.el > _MAX_EL:
            self.el = 2.0 * _MAX_EL - self.el
            self.el_rate = -self.el_rate
        elif self.el < _MIN_EL:
            self.el = 2.0 * _MIN_EL - self.el
            self.el_rate = -self.el_rate


def _init_satellites(cfg: ScenarioConfig, rng) -> list:
    sats = []
    total = sum(cfg.constellation.get(s, 0) for s in SYSTEMS)
    slot = 0
    for system in SYSTEMS:
        for i in range(cfg.constellation.get(system, 0)):
            az = 2.0 * math.pi * slot / total + rng.uniform(-0.15, 0.15)
            el = rng.uniform(math.radians(15.0), math.radians(75.0))
            # draw unconditionally so toggling budget terms never shifts the
            # random stream consumed by other terms
            clock_bias = rng.uniform(-5e-4, 5e-4)
            tgd = rng.uniform(0.0, 1e-8)
            sats.append(_Satellite(
                system=system, sat_id=i + 1, az=az, el=el,
                az_rate=rng.normal(0.0, 1.2e-4),
                el_rate=rng.normal(0.0, 6e-5),
                clock_bias=clock_bias if cfg.budget.sat_clock else 0.0,
                tgd=tgd if cfg.budget.sat_clock else 0.0,
            ))
            slot += 1
    return sats


def simulate(cfg: ScenarioConfig):
    """Generate (manifest, records, truth) for a scenario; deterministic per seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    sats = _init_satellites(cfg, rng)
    trajectory = _Trajectory(cfg.waypoints)
    anchor = cfg.waypoints[0][1]
    anchor_ecef = frames.geodetic_to_ecef(anchor)
    budget = cfg.budget
    nlos = budget.nlos
    dt = 1.0 / cfg.rate
    n_epochs = int(round(cfg.duration * cfg.rate))
    corr_cfg = models.CorrectionConfig()

    records = []
    truth = []
    for k in range(n_epochs):
        t = k * dt
        rx, vel = trajectory.state(t)
        rx_g = frames.ecef_to_geodetic(rx)
        clock = budget.clock_bias + budget.clock_drift * t
        observations = []
        nlos_labels = {}
        for sat in sats:
            if k > 0:
                sat.step(dt)
            sat_pos = place_on_shell(anchor_ecef, anchor, sat.az, sat.el,
                                     cfg.shell_radius)
            ela, aza = frames.elevation_azimuth(rx, sat_pos, rx_g)

            # NLOS state machine: start, dwell, or stay clean
            if sat.nlos_left > 0:
                sat.nlos_left -= 1
            else:
                sat.nlos_bias = 0.0
                p_start = nlos.prob
                if ela < nlos.low_elev_threshold:
                    p_start = min(p_start * nlos.low_elev_multiplier, 1.0)
                if rng.random() < p_start:
                    sat.nlos_bias = rng.uniform(nlos.bias_min, nlos.bias_max)
                    dwell = (rng.exponential(nlos.dwell_mean_s)
                             if nlos.dwell_mean_s > 0 else 0.0)
                    sat.nlos_left = int(math.floor(dwell * cfg.rate))
            is_nlos = sat.nlos_bias != 0.0

            sigma = budget.noise_sigma
            if budget.elevation_weighted_noise:
                sigma /= math.sin(max(ela, math.radians(5.0)))
            noise = rng.normal(0.0, 1.0) * sigma
            snr_noise = rng.normal(0.0, 1.0)
            dropped = rng.random() < budget.dropout_prob
            if dropped:
                continue

            tropo = (models.saastamoinen_delay(rx_g, ela) if budget.tropo
                     else 0.0)
            iono = (models.klobuchar_delay(rx_g, ela, aza, t % 86400.0,
                                           corr_cfg.klobuchar_alpha,
                                           corr_cfg.klobuchar_beta)
                    if budget.iono else 0.0)
            isb = 0.0
            if sat.system != "GPS":
                isb = budget.isb[ISB_SYSTEMS.index(sat.system)]
            geom_range = float(np.linalg.norm(sat_pos - rx))
            pseudorange = (geom_range + clock + isb
                           - SPEED_OF_LIGHT * sat.clock_bias
                           + SPEED_OF_LIGHT * sat.tgd
                           + tropo + iono + sat.nlos_bias + noise)
            snr = 50.0 - 20.0 * (1.0 - math.sin(ela)) + snr_noise
            if is_nlos:
                snr -= nlos.snr_drop_db
            snr = min(max(snr, 10.0), 60.0)
            observations.append(SatObservation(
                system=sat.system, sat_id=sat.sat_id,
                pseudorange=pseudorange, snr=snr, sat_pos=sat_pos,
                sat_clock_bias=sat.clock_bias, tgd=sat.tgd,
                iono_delay=iono, tropo_delay=tropo,
            ))
            if is_nlos:
                nlos_labels[(sat.system, sat.sat_id)] = sat.nlos_bias
        records.append(EpochRecord(
            t=t, observations=observations, truth=rx.copy(),
            truth_clock=clock / SPEED_OF_LIGHT))
        truth.append(TruthEpoch(t=t, pos=rx.copy(), vel=vel.copy(),
                                clock=clock, clock_drift=budget.clock_drift,
                                isb=np.array(budget.isb), nlos=nlos_labels))
    systems = [s for s in SYSTEMS if cfg.constellation.get(s, 0) > 0]
    manifest = DatasetManifest(name=cfg.name, epoch_count=len(records),
                               systems=systems, has_truth=True,
                               source="simulated", seed=cfg.seed)
    return manifest, records, truth


def place_on_shell(anchor_ecef, anchor_geodetic, az, el, shell_radius):
    """Satellite position where the (az, el) ray from the anchor meets the
    geocentric shell."""
    u_enu = np.array([math.cos(el) * math.sin(az),
                      math.cos(el) * math.cos(az),
                      math.sin(el)])
    u = frames.enu_rotation(anchor_geodetic).T @ u_enu
    b = float(anchor_ecef @ u)
    c = float(anchor_ecef @ anchor_ecef) - shell_radius ** 2
    disc = b * b - c
    if disc <= 0.0:
        raise ConfigError("shell radius too small for satellite placement")
    return anchor_ecef + (-b + math.sqrt(disc)) * u


def describe(cfg: ScenarioConfig) -> str:
    """Human-readable scenario summary."""
    cfg.validate()
    lines = [f"scenario {cfg.name!r}: {cfg.duration:.0f} s at {cfg.rate:.0f} Hz "
             f"({int(round(cfg.duration * cfg.rate))} epochs), seed {cfg.seed}"]
    parts = [f"{s}:{n}" for s, n in cfg.constellation.items() if n > 0]
    lines.append(f"constellation: {', '.join(parts)} "
                 f"on a {cfg.shell_radius / 1e6:.2f} Mm shell")
    b = cfg.budget
    lines.append(f"clock {b.clock_bias:+.1f} m {b.clock_drift:+.3f} m/s, "
                 f"ISB (BDS, GAL, GLO) = {tuple(b.isb)} m")
    terms = []
    if b.noise_sigma > 0:
        dep = "/sin(el)" if b.elevation_weighted_noise else ""
        terms.append(f"noise {b.noise_sigma:.2f} m{dep}")
    if b.tropo:
        terms.append("troposphere")
    if b.iono:
        terms.append("ionosphere")
    if b.sat_clock:
        terms.append("satellite clocks")
    if b.dropout_prob > 0:
        terms.append(f"dropout {b.dropout_prob:.1%}")
    lines.append("error budget: " + (", ".join(terms) if terms else "none"))
    if b.nlos.prob > 0:
        lines.append(
            f"NLOS: start probability {b.nlos.prob:.2%}/sat-epoch "
            f"(x{b.nlos.low_elev_multiplier:.0f} below "
            f"{math.degrees(b.nlos.low_elev_threshold):.0f} deg), "
            f"bias U[{b.nlos.bias_min:.0f}, {b.nlos.bias_max:.0f}] m, "
            f"dwell ~{b.nlos.dwell_mean_s:.0f} s, "
            f"SNR drop {b.nlos.snr_drop_db:.0f} dB")
    else:
        lines.append("NLOS: none (clean scenario)")
    return "\n".join(lines)


# --- truth log file ----------------------------------------------------------

def emit_truth(manifest: DatasetManifest, truth, path):
    lines = ['{"format":' + json.dumps(TRUTH_FORMAT_TAG)
             + f',"version":{TRUTH_FORMAT_VERSION}'
             + ',"name":' + json.dumps(manifest.name)
             + f',"epoch_count":{len(truth)}}}']
    for e in truth:
        nlos = ",".join(f'"{s}:{i}":{_fmt(b)}'
                        for (s, i), b in sorted(e.nlos.items()))
        lines.append(
            "{" + f'"t":{_fmt(e.t)}'
            + f',"pos":[{_fmt(e.pos[0])},{_fmt(e.pos[1])},{_fmt(e.pos[2])}]'
            + f',"vel":[{_fmt(e.vel[0])},{_fmt(e.vel[1])},{_fmt(e.vel[2])}]'
            + f',"clock":{_fmt(e.clock)}'
            + f',"clock_drift":{_fmt(e.clock_drift)}'
            + f',"isb":[{_fmt(e.isb[0])},{_fmt(e.isb[1])},{_fmt(e.isb[2])}]'
            + ',"nlos":{' + nlos + "}}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_truth(path):
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(1, "empty truth file")
    header = json.loads(lines[0])
    if header.get("format") != TRUTH_FORMAT_TAG:
        raise FormatError(1, f"not a {TRUTH_FORMAT_TAG} file")
    truth = []
    for i, text in enumerate(lines[1:], start=2):
        obj = json.loads(text)
        nlos = {}
        for key, bias in obj["nlos"].items():
            system, sat_id = key.split(":")
            nlos[(system, int(sat_id))] = float(bias)
        truth.append(TruthEpoch(
            t=float(obj["t"]), pos=np.array(obj["pos"], dtype=float),
            vel=np.array(obj["vel"], dtype=float), clock=float(obj["clock"]),
            clock_drift=float(obj["clock_drift"]),
            isb=np.array(obj["isb"], dtype=float), nlos=nlos))
    if len(truth) != header.get("epoch_count"):
        raise FormatError(1, "epoch_count mismatch in truth file")
    return truth
