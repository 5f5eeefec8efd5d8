"""Per-satellite signal-quality features and fixed-width packing.

Five raw features per satellite: SNR, elevation, azimuth, post-fit
pseudorange residual, and the geometry contribution (change in GDOP when
the satellite is removed).  Epochs with varying satellite counts are
packed into a fixed batch x N_max x 8 block with a validity mask; masked
slots are exactly zero.
"""

from dataclasses import dataclass
from enum import Enum
import logging
import math

import numpy as np

from . import frames, models
from .coarse import CoarseSolution, geometry_matrix
from .data import EpochRecord, ISB_SYSTEMS
from .errors import SingularGeometry

log = logging.getLogger(__name__)

FEATURE_DIM = 8
DOP_COND_LIMIT = 1e12


@dataclass
class NormalizationSpec:
    """Fixed affine scalings: stateless, identical at train and test time."""

    snr_scale: float = 60.0
    ela_scale: float = math.pi / 2.0
    psr_scale: float = 30.0     # [m]
    psr_clamp: float = 3.0
    dpc_scale: float = 1.0
    dpc_clamp: float = 3.0


@dataclass
class DopSet:
    hdop: float
    vdop: float
    pdop: float
    gdop: float


class DpcStatus(Enum):
    OK = "ok"
    INSUFFICIENT_REDUNDANCY = "insufficient_redundancy"
    SINGULAR_REDUCED = "singular_reduced"


@dataclass
class SatFeatures:
    """Raw (unnormalized) features for one satellite."""

    snr: float
    ela: float
    aza: float
    psr: float
    dpc: float
    system_onehot: np.ndarray   # (BDS, GAL, GLO)


@dataclass
class FeatureTensor:
    """Padded feature block: values (B, N_max, 8), mask (B, N_max)."""

    values: np.ndarray
    mask: np.ndarray
    sat_index_map: list    # per row: list of (system, sat_id), one per valid slot


def compute_psr(epoch: EpochRecord, coarse_sol: CoarseSolution,
                correction_cfg: models.CorrectionConfig) -> np.ndarray:
    """Post-fit pseudorange residuals at the coarse solution [m].

    The estimated clock and ISB are subtracted along with the geometric
    range: the raw measurement-minus-range would be dominated by the
    receiver clock and carry no per-satellite information.
    """
    rx_g = frames.ecef_to_geodetic(coarse_sol.rx_pos)
    z = models.corrected_pseudoranges(epoch, rx_g, correction_cfg)
    h, ranges = geometry_matrix(coarse_sol.rx_pos, epoch)
    state = coarse_sol.state7()
    return z - (ranges + h[:, 3:] @ state[3:])


def dop_design_matrix(elas, azas) -> np.ndarray:
    """Rows [cos(el)sin(az), cos(el)cos(az), sin(el), 1]; no ISB columns."""
    elas = np.asarray(elas, dtype=float)
    azas = np.asarray(azas, dtype=float)
    return np.column_stack([
        np.cos(elas) * np.sin(azas),
        np.cos(elas) * np.cos(azas),
        np.sin(elas),
        np.ones_like(elas),
    ])


def _dop_from_q(q: np.ndarray) -> DopSet:
    hdop = math.sqrt(q[0, 0] + q[1, 1])
    vdop = math.sqrt(q[2, 2])
    pdop = math.sqrt(q[0, 0] + q[1, 1] + q[2, 2])
    gdop = math.sqrt(pdop * pdop + q[3, 3])
    return DopSet(hdop=hdop, vdop=vdop, pdop=pdop, gdop=gdop)


def compute_dop(elas, azas) -> DopSet:
    """DOP components from the inverse normal matrix of the design matrix."""
    h = dop_design_matrix(elas, azas)
    if h.shape[0] < 4:
        raise SingularGeometry(f"{h.shape[0]} satellites < 4")
    normal = h.T @ h
    if np.linalg.cond(normal) > DOP_COND_LIMIT:
        raise SingularGeometry("DOP normal matrix numerically singular")
    q = np.linalg.inv(normal)
    return _dop_from_q(q)


def compute_dpc(elas, azas, n: int):
    """GDOP(all) - GDOP(all but n); negative when removal degrades geometry.

    Returns (value, DpcStatus).  With only 4 satellites the reduced
    geometry is unsolvable and the contribution is reported as 0; if the
    reduced matrix is singular the satellite is geometry-critical and the
    contribution is reported as -GDOP(all).
    """
    values, statuses = compute_dpc_all(elas, azas)
    return values[n], statuses[n]


def compute_dpc_all(elas, azas):
    """Leave-one-out GDOP deltas for every satellite at once.

    Uses a rank-one Sherman-Morrison downdate of the inverse normal matrix,
    equivalent to rebuilding and re-inverting the reduced matrix per
    satellite but O(N) instead of O(N^2) matrix inversions.
    """
    h = dop_design_matrix(elas, azas)
    n_sats = h.shape[0]
    if n_sats < 4:
        raise SingularGeometry(f"{n_sats} satellites < 4")
    normal = h.T @ h
    if np.linalg.cond(normal) > DOP_COND_LIMIT:
        raise SingularGeometry("DOP normal matrix numerically singular")
    q = np.linalg.inv(normal)
    gdop_full = _dop_from_q(q).gdop
    values = np.zeros(n_sats)
    statuses = []
    if n_sats == 4:
        return values, [DpcStatus.INSUFFICIENT_REDUNDANCY] * 4
    for i in range(n_sats):
        row = h[i]
        qh = q @ row
        denom = 1.0 - row @ qh
        if denom < 1e-12:
            # removing this satellite makes the geometry unsolvable
            values[i] = -gdop_full
            statuses.append(DpcStatus.SINGULAR_REDUCED)
            continue
        q_reduced_diag = np.diag(q) + qh * qh / denom
        pdop2 = q_reduced_diag[0] + q_reduced_diag[1] + q_reduced_diag[2]
        gdop_reduced = math.sqrt(pdop2 + q_reduced_diag[3])
        values[i] = gdop_full - gdop_reduced
        statuses.append(DpcStatus.OK)
    return values, statuses


def epoch_features(epoch: EpochRecord, coarse_sol: CoarseSolution,
                   correction_cfg: models.CorrectionConfig) -> list:
    """Raw SatFeatures for every observation, in epoch order."""
    rx_g = frames.ecef_to_geodetic(coarse_sol.rx_pos)
    rx_ecef = coarse_sol.rx_pos
    elas, azas = [], []
    for obs in epoch.observations:
        ela, aza = frames.elevation_azimuth(rx_ecef, obs.sat_pos, rx_g)
        elas.append(ela)
        azas.append(aza)
    psr = compute_psr(epoch, coarse_sol, correction_cfg)
    n = len(epoch.observations)
    if n >= 4:
        dpc, _ = compute_dpc_all(elas, azas)
    else:
        dpc = np.zeros(n)
    out = []
    for i, obs in enumerate(epoch.observations):
        onehot = np.zeros(3)
        if obs.system != "GPS":
            onehot[ISB_SYSTEMS.index(obs.system)] = 1.0
        out.append(SatFeatures(snr=obs.snr, ela=elas[i], aza=azas[i],
                               psr=float(psr[i]), dpc=float(dpc[i]),
                               system_onehot=onehot))
    return out


def feature_vector(f: SatFeatures, norms: NormalizationSpec) -> np.ndarray:
    """Normalized 8-vector for one satellite.

    Layout: [snr', ela', sin(aza), cos(aza), psr', dpc', bds_or_gal, glo],
    with azimuth encoded as sin/cos to avoid the 2*pi seam and the
    constellation flags using GPS as the all-zero base.
    """
    psr = np.clip(f.psr / norms.psr_scale, -norms.psr_clamp, norms.psr_clamp)
    dpc = np.clip(f.dpc / norms.dpc_scale, -norms.dpc_clamp, norms.dpc_clamp)
    return np.array([
        f.snr / norms.snr_scale,
        f.ela / norms.ela_scale,
        math.sin(f.aza),
        math.cos(f.aza),
        psr,
        dpc,
        f.system_onehot[0] + f.system_onehot[1],   # BDS or GAL
        f.system_onehot[2],                        # GLO
    ])


def pack_features(epoch: EpochRecord, coarse_sol: CoarseSolution,
                  norms: NormalizationSpec, n_max: int,
                  correction_cfg: models.CorrectionConfig) -> FeatureTensor:
    """One padded feature row (1, N_max, 8) for an epoch.

    Slots follow input order; when the epoch has more satellites than
    N_max, the ones with the smallest |DPC| are dropped (and logged).
    """
    if not epoch.observations:
        return FeatureTensor(values=np.zeros((1, n_max, FEATURE_DIM)),
                             mask=np.zeros((1, n_max), dtype=bool),
                             sat_index_map=[[]])
    feats = epoch_features(epoch, coarse_sol, correction_cfg)
    order = list(range(len(feats)))
    if len(feats) > n_max:
        by_importance = sorted(order, key=lambda i: abs(feats[i].dpc), reverse=True)
        keep = sorted(by_importance[:n_max])
        dropped = [i for i in order if i not in keep]
        for i in dropped:
            obs = epoch.observations[i]
            log.warning("epoch t=%.3f: dropping %s:%d beyond N_max=%d",
                        epoch.t, obs.system, obs.sat_id, n_max)
        order = keep
    values = np.zeros((1, n_max, FEATURE_DIM))
    mask = np.zeros((1, n_max), dtype=bool)
    index_map = []
    for slot, i in enumerate(order):
        values[0, slot] = feature_vector(feats[i], norms)
        mask[0, slot] = True
        obs = epoch.observations[i]
        index_map.append((obs.system, obs.sat_id))
    return FeatureTensor(values=values, mask=mask, sat_index_map=[index_map])


def stack_feature_tensors(tensors) -> FeatureTensor:
    """Concatenate per-epoch rows into one batch block."""
    return FeatureTensor(
        values=np.concatenate([t.values for t in tensors], axis=0),
        mask=np.concatenate([t.mask for t in tensors], axis=0),
        sat_index_map=[m for t in tensors for m in t.sat_index_map],
    )
