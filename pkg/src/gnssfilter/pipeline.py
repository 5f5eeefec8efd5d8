"""Per-epoch preprocessing and the sequential filter driver.

Everything that does not depend on the network parameters is computed once
per epoch up front: quality control, the coarse least-squares solution,
corrected pseudoranges, elevations, and the packed feature row.  Corrections
and feature geometry are anchored at the per-epoch coarse solution, which
keeps preprocessing independent of the filter trajectory (the meter-level
difference between coarse and filtered positions is irrelevant at the
~2e7 m ranges involved) and makes runs bit-reproducible.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from . import coarse as coarse_mod
from . import ekf, features, frames, models, network
from .coarse import CoarseSolution, QcConfig
from .errors import NotSPD, RankDeficient, SingularS, TooFewSatellites
from .features import FeatureTensor, NormalizationSpec

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    qc: QcConfig = field(default_factory=QcConfig)
    corrections: models.CorrectionConfig = field(
        default_factory=models.CorrectionConfig)
    norms: NormalizationSpec = field(default_factory=NormalizationSpec)
    n_max: int = 40
    init: ekf.InitConfig = field(default_factory=ekf.InitConfig)
    process_noise: ekf.ProcessNoiseConfig = field(
        default_factory=ekf.ProcessNoiseConfig)
    max_gap: float = ekf.MAX_GAP_S
    baseline_a: float = 0.3    # elevation weight model r = (a + b/sin el)^2
    baseline_b: float = 0.3


@dataclass
class PreparedEpoch:
    """Parameter-independent per-epoch data; ok=False epochs carry a reason."""

    t: float
    ok: bool
    reason: str = ""
    truth: np.ndarray | None = None
    z: np.ndarray | None = None              # corrected pseudoranges
    sat_pos: np.ndarray | None = None        # (N, 3)
    sys_idx: np.ndarray | None = None        # (N,)
    elevations: np.ndarray | None = None     # (N,) at the coarse solution
    coarse: CoarseSolution | None = None
    features: FeatureTensor | None = None
    n_sats: int = 0
    rejections: list = field(default_factory=list)


def prepare_epoch(record, prior_pos, cfg: PipelineConfig) -> PreparedEpoch:
    try:
        filtered, rejections = coarse_mod.quality_control(
            record, prior_pos, cfg.qc, cfg.corrections)
        x0 = coarse_mod.X0_COLD.copy()
        if prior_pos is not None:
            x0[:3] = prior_pos
        sol = coarse_mod.ils_solve(filtered, x0, cfg.corrections)
        if not sol.converged:
            return PreparedEpoch(t=record.t, ok=False, truth=record.truth,
                                 reason="coarse solution did not converge")
    except (TooFewSatellites, RankDeficient) as exc:
        return PreparedEpoch(t=record.t, ok=False, truth=record.truth,
                             reason=str(exc))
    rx_g = frames.ecef_to_geodetic(sol.rx_pos)
    z = models.corrected_pseudoranges(filtered, rx_g, cfg.corrections)
    sat_pos = np.array([o.sat_pos for o in filtered.observations])
    elevations = np.array([
        frames.elevation_azimuth(sol.rx_pos, o.sat_pos, rx_g)[0]
        for o in filtered.observations])
    ft = features.pack_features(filtered, sol, cfg.norms, cfg.n_max,
                                cfg.corrections)
    return PreparedEpoch(
        t=record.t, ok=True, truth=record.truth, z=z, sat_pos=sat_pos,
        sys_idx=ekf.system_indices(filtered.observations),
        elevations=elevations, coarse=sol, features=ft,
        n_sats=len(filtered.observations), rejections=rejections)


def prepare_dataset(records, cfg: PipelineConfig):
    """Prepare every epoch, warm-starting each from the previous solution."""
    prepared = []
    prior = None
    for record in records:
        pe = prepare_epoch(record, prior, cfg)
        if pe.ok:
            prior = pe.coarse.rx_pos
        else:
            log.debug("epoch t=%.3f unusable: %s", record.t, pe.reason)
        prepared.append(pe)
    return prepared


@dataclass
class EpochSolution:
    t: float
    valid: bool
    x: np.ndarray | None = None          # 11-state
    updated: bool = False                # measurement update applied
    reason: str = ""
    nis_total: float = float("nan")
    n_sats: int = 0
    p_diag: np.ndarray | None = None
    innovation_rms: float = float("nan")


def baseline_weights(cfg: PipelineConfig):
    """Fixed elevation-model variances with zero innovation compensation."""

    def weight_fn(pe: PreparedEpoch):
        r = ekf.elevation_model_r(pe.elevations, cfg.baseline_a, cfg.baseline_b)
        return r, np.zeros(pe.n_sats)

    return weight_fn


def network_weights(params: dict, chunk: int = 256):
    """Per-epoch (r, v_comp) from a batched network forward over the
    prepared epochs; outputs are feature-only, so they are precomputed."""
    cache = {}

    def precompute(prepared):
        usable = [pe for pe in prepared if pe.ok and pe.n_sats > 0]
        for lo in range(0, len(usable), chunk):
            part = usable[lo:lo + chunk]
            ft = features.stack_feature_tensors([pe.features for pe in part])
            out = network.forward(ft.values, ft.mask, params)
            for b, pe in enumerate(part):
                n = pe.n_sats
                cache[id(pe)] = (out.r_diag.value[b, :n].copy(),
                                 out.v_comp.value[b, :n].copy())

    def weight_fn(pe: PreparedEpoch):
        if id(pe) not in cache:
            out = network.forward(pe.features.values, pe.features.mask, params)
            cache[id(pe)] = (out.r_diag.value[0, :pe.n_sats].copy(),
                             out.v_comp.value[0, :pe.n_sats].copy())
        return cache[id(pe)]

    weight_fn.precompute = precompute
    return weight_fn


def run_filter(prepared, weight_fn, cfg: PipelineConfig):
    """Sequential EKF sweep: init from the first usable coarse solution,
    re-init after long gaps, pass the state through on update failures."""
    if hasattr(weight_fn, "precompute"):
        weight_fn.precompute(prepared)
    state = None
    solutions = []
    for pe in prepared:
        if not pe.ok:
            solutions.append(EpochSolution(t=pe.t, valid=False,
                                           reason=pe.reason))
            continue
        if state is None or pe.t - state.t > cfg.max_gap:
            state = ekf.init_filter(pe.coarse, cfg.init, pe.t)
            solutions.append(EpochSolution(t=pe.t, valid=True,
                                           x=state.x.copy(), updated=False,
                                           reason="initialized from coarse",
                                           n_sats=pe.n_sats,
                                           p_diag=np.diagonal(state.P).copy()))
            continue
        dt = pe.t - state.t
        if dt <= 0:
            solutions.append(EpochSolution(t=pe.t, valid=False,
                                           reason="non-increasing time"))
            continue
        state = ekf.time_update(state, dt, cfg.process_noise)
        r_diag, v_comp = weight_fn(pe)
        try:
            state, diag = ekf.measurement_update(
                state, pe.z, pe.sat_pos, pe.sys_idx, r_diag, v_comp)
            solutions.append(EpochSolution(
                t=pe.t, valid=True, x=state.x.copy(), updated=True,
                nis_total=diag.nis_total, n_sats=pe.n_sats,
                p_diag=np.diagonal(state.P).copy(),
                innovation_rms=float(np.sqrt(np.mean(diag.innovation ** 2)))))
        except (SingularS, NotSPD) as exc:
            log.warning("epoch t=%.3f update failed: %s", pe.t, exc)
            solutions.append(EpochSolution(t=pe.t, valid=True,
                                           x=state.x.copy(), updated=False,
                                           reason=str(exc), n_sats=pe.n_sats,
                                           p_diag=np.diagonal(state.P).copy()))
    return solutions
