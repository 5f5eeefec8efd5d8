"""Coarse positioning: quality control and equal-weighted iterated least squares.

The solver estimates receiver position, clock bias, and one inter-system
bias per non-GPS constellation present in the epoch, all in meters, using
identity weighting.  Quality control screens observations by elevation,
SNR, and robust post-fit residual rejection before the final solve.
"""

from dataclasses import dataclass
import logging
import math

import numpy as np

from . import frames, models
from .data import EpochRecord, ISB_SYSTEMS
from .errors import RankDeficient, TooFewSatellites

log = logging.getLogger(__name__)

# Cold-start state: on the ellipsoid surface rather than the geocenter,
# which would make the local-vertical construction degenerate.
X0_COLD = np.array([frames.WGS84_A, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])

POSITION_TOL = 1e-4   # [m] convergence threshold on the position increment
MAX_ITERATIONS = 10
COND_LIMIT = 1e12

# Rejection scale floor: without it a noiseless epoch has MAD = 0 and every
# satellite would look like an outlier.
_MAD_FLOOR = 0.1  # [m]


@dataclass
class QcConfig:
    elevation_mask: float = math.radians(10.0)   # [rad]
    snr_min: float = 25.0                        # [dB-Hz]
    residual_reject_factor: float = 4.0
    min_sats_per_system: int = 1

    def validate(self):
        if not (0.0 <= self.elevation_mask <= math.radians(30.0)):
            raise ValueError("elevation mask must be within [0, 30] degrees")
        if self.residual_reject_factor < 2.0:
            raise ValueError("residual_reject_factor must be >= 2")


@dataclass
class CoarseSolution:
    rx_pos: np.ndarray        # ECEF [m]
    clock_bias: float         # c * receiver clock offset [m]
    isb: np.ndarray           # (BDS, GAL, GLO) biases relative to GPS [m]
    residuals: np.ndarray     # post-fit, observed minus modeled [m]
    los_unit: np.ndarray      # (N, 3) unit line-of-sight in ENU at the solution
    iterations: int
    converged: bool

    def state7(self) -> np.ndarray:
        return np.concatenate([self.rx_pos, [self.clock_bias], self.isb])


def _min_required(epoch: EpochRecord) -> int:
    extra = len({o.system for o in epoch.observations} - {"GPS"})
    return 4 + extra


def geometry_matrix(rx, epoch: EpochRecord):
    """Jacobian of the pseudorange model: rows [-u, 1, aC, aE, aR].

    Returns (H, ranges) with H of shape (N, 7).  Exactly one indicator
    column is 1 for a non-GPS satellite, all zero for GPS.
    """
    rx = np.asarray(rx, dtype=float)
    n = len(epoch.observations)
    h = np.zeros((n, 7))
    ranges = np.zeros(n)
    for i, obs in enumerate(epoch.observations):
        d = obs.sat_pos - rx
        rng = np.linalg.norm(d)
        if rng <= 1.0:
            raise ValueError(f"satellite {obs.system}:{obs.sat_id} range {rng} <= 1 m")
        h[i, :3] = -d / rng
        h[i, 3] = 1.0
        if obs.system != "GPS":
            h[i, 4 + ISB_SYSTEMS.index(obs.system)] = 1.0
        ranges[i] = rng
    return h, ranges


def _predicted(ranges, h, x):
    # modeled pseudorange: geometric range + clock + per-system ISB
    return ranges + h[:, 3:] @ x[3:]


def ils_solve(epoch: EpochRecord, x0, correction_cfg: models.CorrectionConfig,
              tol: float = POSITION_TOL,
              max_iterations: int = MAX_ITERATIONS) -> CoarseSolution:
    """Gauss-Newton on the corrected pseudoranges with identity weighting.

    ``x0`` is the 7-state [x, y, z, clock, ISB_BDS, ISB_GAL, ISB_GLO] in
    meters.  ISB components for constellations absent from the epoch keep
    their x0 values and their columns are dropped from the solve.
    Corrections are re-evaluated at the current iterate.
    """
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (7,):
        raise ValueError("x0 must be a 7-vector")
    present = {o.system for o in epoch.observations}
    cols = [0, 1, 2, 3] + [4 + i for i, s in enumerate(ISB_SYSTEMS) if s in present]
    if len(epoch.observations) < len(cols):
        raise TooFewSatellites(
            f"{len(epoch.observations)} satellites for {len(cols)} states")

    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        rx_g = frames.ecef_to_geodetic(x[:3])
        z = models.corrected_pseudoranges(epoch, rx_g, correction_cfg)
        h, ranges = geometry_matrix(x[:3], epoch)
        resid = z - _predicted(ranges, h, x)
        ha = h[:, cols]
        normal = ha.T @ ha
        if np.linalg.cond(normal) > COND_LIMIT:
            raise RankDeficient(f"normal matrix condition {np.linalg.cond(normal):.2e}")
        dx = np.linalg.solve(normal, ha.T @ resid)
        x[cols] += dx
        if np.linalg.norm(dx[:3]) < tol:
            converged = True
            break

    rx_g = frames.ecef_to_geodetic(x[:3])
    z = models.corrected_pseudoranges(epoch, rx_g, correction_cfg)
    h, ranges = geometry_matrix(x[:3], epoch)
    residuals = z - _predicted(ranges, h, x)
    # ENU line-of-sight units at the converged position
    rot = frames.enu_rotation(rx_g)
    los_unit = -(h[:, :3]) @ rot.T
    return CoarseSolution(
        rx_pos=x[:3].copy(),
        clock_bias=float(x[3]),
        isb=x[4:].copy(),
        residuals=residuals,
        los_unit=los_unit,
        iterations=iterations,
        converged=converged,
    )


def quality_control(epoch: EpochRecord, prior_pos, cfg: QcConfig,
                    correction_cfg: models.CorrectionConfig):
    """Screen an epoch; returns (filtered EpochRecord, rejection log).

    The elevation mask applies only when a prior position is available.
    The residual pass solves the screened epoch and rejects observations
    whose post-fit residual deviates from the median by more than
    factor * 1.4826 * MAD.  Raises TooFewSatellites when fewer than
    4 + (non-GPS systems present) observations survive.
    """
    rejected = []
    kept = list(epoch.observations)

    if prior_pos is not None:
        prior_g = frames.ecef_to_geodetic(prior_pos)
        prior_ecef = np.asarray(prior_pos, dtype=float)
        still = []
        for obs in kept:
            ela, _ = frames.elevation_azimuth(prior_ecef, obs.sat_pos, prior_g)
            if ela < cfg.elevation_mask:
                rejected.append((obs.system, obs.sat_id, "elevation"))
            else:
                still.append(obs)
        kept = still

    still = []
    for obs in kept:
        if obs.snr < cfg.snr_min:
            rejected.append((obs.system, obs.sat_id, "snr"))
        else:
            still.append(obs)
    kept = still

    if cfg.min_sats_per_system > 1:
        counts = {}
        for obs in kept:
            counts[obs.system] = counts.get(obs.system, 0) + 1
        still = []
        for obs in kept:
            if counts[obs.system] < cfg.min_sats_per_system:
                rejected.append((obs.system, obs.sat_id, "sparse system"))
            else:
                still.append(obs)
        kept = still

    filtered = EpochRecord(t=epoch.t, observations=kept,
                           truth=epoch.truth, truth_clock=epoch.truth_clock)
    if len(kept) < _min_required(filtered):
        raise TooFewSatellites(
            f"{len(kept)} satellites after screening, need {_min_required(filtered)}")

    x0 = X0_COLD.copy()
    if prior_pos is not None:
        x0[:3] = np.asarray(prior_pos, dtype=float)
    fit = ils_solve(filtered, x0, correction_cfg)
    med = np.median(fit.residuals)
    scale = max(1.4826 * np.median(np.abs(fit.residuals - med)), _MAD_FLOOR)
    limit = cfg.residual_reject_factor * scale
    still = []
    for obs, r in zip(kept, fit.residuals):
        if abs(r - med) > limit:
            rejected.append((obs.system, obs.sat_id, "residual"))
        else:
            still.append(obs)
    kept = still

    filtered = EpochRecord(t=epoch.t, observations=kept,
                           truth=epoch.truth, truth_clock=epoch.truth_clock)
    if len(kept) < _min_required(filtered):
        raise TooFewSatellites(
            f"{len(kept)} satellites after residual rejection, "
            f"need {_min_required(filtered)}")
    for system, sat_id, reason in rejected:
        log.debug("QC rejected %s:%d (%s) at t=%.3f", system, sat_id, reason, epoch.t)
    return filtered, rejected
