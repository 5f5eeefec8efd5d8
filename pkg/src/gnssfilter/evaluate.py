"""ENU error series, RMSE summaries, and the three runnable pipelines.

All methods consume the same prepared dataset and emit the same report
schema so results are directly comparable: equal-weight least squares per
epoch, the elevation-weighted EKF, and the learned-weight filter.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import coarse as coarse_mod
from . import ekf, frames
from .errors import LengthMismatch, NoValidEpochs
from .pipeline import (EpochSolution, PipelineConfig, baseline_weights,
                       network_weights, prepare_dataset, run_filter)

CDF_POINTS = 100


@dataclass
class ErrorSeries:
    t: np.ndarray
    east: np.ndarray
    north: np.ndarray
    up: np.ndarray
    valid: np.ndarray          # epochs with both a solution and truth


@dataclass
class RunReport:
    method: str
    rmse_e: float
    rmse_n: float
    rmse_u: float
    rmse_2d: float
    rmse_3d: float
    p95_3d: float
    cdf_quantiles: np.ndarray  # (100,) probabilities
    cdf_values: np.ndarray     # (100,) 3D error quantiles [m]
    epochs_used: int
    epochs_skipped: int


def truth_reference(records) -> frames.GeodeticPos:
    """Fixed ENU reference: the first ground-truth position."""
    for record in records:
        if record.truth is not None:
            return frames.ecef_to_geodetic(record.truth)
    raise NoValidEpochs("dataset has no ground truth")


def enu_errors(solutions, truths, ref: frames.GeodeticPos) -> ErrorSeries:
    """Per-epoch ECEF error rotated into ENU at a fixed reference point."""
    if len(solutions) != len(truths):
        raise LengthMismatch(f"{len(solutions)} solutions vs {len(truths)} truths")
    rot = frames.enu_rotation(ref)
    n = len(solutions)
    east = np.full(n, np.nan)
    north = np.full(n, np.nan)
    up = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)
    t = np.zeros(n)
    for i, (sol, truth) in enumerate(zip(solutions, truths)):
        t[i] = sol.t
        if not sol.valid or truth is None:
            continue
        err = rot @ (sol.x[:3] - truth)
        east[i], north[i], up[i] = err
        valid[i] = True
    return ErrorSeries(t=t, east=east, north=north, up=up, valid=valid)


def summarize(series: ErrorSeries, method: str) -> RunReport:
    """Component RMSE, 2D/3D composites, p95, and the empirical 3D CDF."""
    mask = series.valid
    if not mask.any():
        raise NoValidEpochs(f"method {method}: no valid epochs")
    e = series.east[mask]
    n = series.north[mask]
    u = series.up[mask]
    rmse_e = math.sqrt(float(np.mean(e ** 2)))
    rmse_n = math.sqrt(float(np.mean(n ** 2)))
    rmse_u = math.sqrt(float(np.mean(u ** 2)))
    rmse_2d = math.sqrt(rmse_e ** 2 + rmse_n ** 2)
    rmse_3d = math.sqrt(rmse_2d ** 2 + rmse_u ** 2)
    err3d = np.sqrt(e ** 2 + n ** 2 + u ** 2)
    quantiles = np.arange(1, CDF_POINTS + 1) / CDF_POINTS
    return RunReport(
        method=method,
        rmse_e=rmse_e, rmse_n=rmse_n, rmse_u=rmse_u,
        rmse_2d=rmse_2d, rmse_3d=rmse_3d,
        p95_3d=float(np.quantile(err3d, 0.95)),
        cdf_quantiles=quantiles,
        cdf_values=np.quantile(err3d, quantiles),
        epochs_used=int(mask.sum()),
        epochs_skipped=int((~mask).sum()),
    )


def run_baseline_ls(records, cfg: PipelineConfig, prepared=None):
    """Per-epoch equal-weighted least squares; no filtering."""
    if prepared is None:
        prepared = prepare_dataset(records, cfg)
    solutions = []
    for pe in prepared:
        if not pe.ok:
            solutions.append(EpochSolution(t=pe.t, valid=False, reason=pe.reason))
            continue
        x = np.zeros(ekf.NSTATE)
        x[:3] = pe.coarse.rx_pos
        x[ekf.CLOCK] = pe.coarse.clock_bias
        x[ekf.ISB] = pe.coarse.isb
        solutions.append(EpochSolution(t=pe.t, valid=True, x=x, updated=False,
                                       n_sats=pe.n_sats))
    return solutions


def run_baseline_ekf(records, cfg: PipelineConfig, prepared=None):
    """EKF with the fixed elevation-model R and zero compensation."""
    if prepared is None:
        prepared = prepare_dataset(records, cfg)
    return run_filter(prepared, baseline_weights(cfg), cfg)


def run_lf(records, params: dict, cfg: PipelineConfig, prepared=None):
    """Learned-weight filter: QC -> coarse -> features -> network -> EKF."""
    if prepared is None:
        prepared = prepare_dataset(records, cfg)
    return run_filter(prepared, network_weights(params), cfg)


def report_for(records, solutions, method: str) -> RunReport:
    ref = truth_reference(records)
    series = enu_errors(solutions, [r.truth for r in records], ref)
    return summarize(series, method)


# --- writers -------------------------------------------------------------------

def _g(x: float) -> str:
    return format(float(x), ".17g")


def write_report_csv(reports, path):
    lines = ["method,rmse_e,rmse_n,rmse_u,rmse_2d,rmse_3d,p95_3d,"
             "epochs_used,epochs_skipped"]
    for r in reports:
        lines.append(",".join([
            r.method, _g(r.rmse_e), _g(r.rmse_n), _g(r.rmse_u),
            _g(r.rmse_2d), _g(r.rmse_3d), _g(r.p95_3d),
            str(r.epochs_used), str(r.epochs_skipped)]))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_cdf_csv(reports, path):
    lines = ["quantile," + ",".join(r.method for r in reports)]
    for i in range(CDF_POINTS):
        row = [_g(reports[0].cdf_quantiles[i])]
        row.extend(_g(r.cdf_values[i]) for r in reports)
        lines.append(",".join(row))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_solutions_csv(solutions, path):
    lines = ["t,valid,updated,x,y,z,vx,vy,vz,clock,clock_drift,"
             "isb_bds,isb_gal,isb_glo,n_sats,nis,innovation_rms"]
    for s in solutions:
        if s.valid:
            fields = ([_g(s.t), "1", "1" if s.updated else "0"]
                      + [_g(v) for v in s.x]
                      + [str(s.n_sats), _g(s.nis_total), _g(s.innovation_rms)])
        else:
            fields = [_g(s.t), "0", "0"] + [""] * 11 + ["0", "", ""]
        lines.append(",".join(fields))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_diagnostics_csv(solutions, path):
    header = (["t", "valid", "updated", "nis", "innovation_rms", "n_sats"]
              + [f"p_{name}" for name in
                 ("x", "y", "z", "vx", "vy", "vz", "clock", "drift",
                  "isb_bds", "isb_gal", "isb_glo")])
    lines = [",".join(header)]
    for s in solutions:
        row = [_g(s.t), "1" if s.valid else "0", "1" if s.updated else "0",
               _g(s.nis_total) if s.valid else "",
               _g(s.innovation_rms) if s.valid else "", str(s.n_sats)]
        if s.p_diag is not None:
            row.extend(_g(v) for v in s.p_diag)
        else:
            row.extend([""] * 11)
        lines.append(",".join(row))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def summary_text(reports) -> str:
    """Plain-text comparison table."""
    header = f"{'method':<14} {'E':>8} {'N':>8} {'U':>8} {'2D':>8} " \
             f"{'3D':>8} {'p95':>8} {'used':>6} {'skip':>5}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.method:<14} {r.rmse_e:>8.3f} {r.rmse_n:>8.3f} "
            f"{r.rmse_u:>8.3f} {r.rmse_2d:>8.3f} {r.rmse_3d:>8.3f} "
            f"{r.p95_3d:>8.3f} {r.epochs_used:>6d} {r.epochs_skipped:>5d}")
    lines.append("(RMSE in meters over valid epochs)")
    return "\n".join(lines)
