"""Hard-example-mining loss, optimizer, schedule, and the training loop.

Each training epoch sweeps the trajectory chronologically.  The filter
state propagates with the current parameters but enters each epoch's
gradient as a constant (truncation window of one epoch); losses accumulate
over mini-batches of consecutive epochs, and one Adam step is applied per
mini-batch.  The per-sample weighting follows the printed equation chain
exactly, with the batch maximum treated as a stop-gradient constant and
guarded by eps_max so the hardest sample's weight is well-defined.
"""

from dataclasses import dataclass, field
import logging
import math
import time

import numpy as np

from . import ekf, features, frames, network, tape
from .errors import DivergedLoss, NoGroundTruth, NotSPD, SingularS
from .pipeline import PipelineConfig, network_weights, prepare_dataset, run_filter
from .tape import Var, backward

log = logging.getLogger(__name__)


@dataclass
class DhemConfig:
    alpha: float = 1.0          # overall loss scale
    gamma: float = 2.0          # initial difficulty weight
    lam: float = 0.5            # decay rate of the dynamic exponent
    dynamic_gamma: bool = True
    # guard added to the batch maximum; 0 reproduces the printed formula
    # exactly but divides 0/0 on an all-zero batch.  The default is a full
    # meter: with a tiny guard the batch-max sample's weight derivative
    # scales like 1/eps, and that one quasi-singular gradient per batch
    # reliably destabilizes training.
    eps_max: float = 1.0

    def validate(self):
        if self.alpha <= 0 or self.gamma < 0 or self.lam < 0 or self.eps_max < 0:
            raise ValueError("invalid hard-example-mining configuration")


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr0: float = 1e-3
    t_max: int = 50             # cosine schedule period
    eta_min: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.2   # tail of the training set held out per epoch

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr0 <= 0:
            raise ValueError("invalid training configuration")


@dataclass
class TrainReport:
    mean_loss: list = field(default_factory=list)
    val_rmse_3d: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    epochs_skipped: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_rmse: float = float("inf")
    wall_time: float = 0.0      # informational; excluded from serialized CSV


# --- loss ---------------------------------------------------------------------

def dhem_breakdown(base: np.ndarray, cfg: DhemConfig):
    """Per-sample weights and losses for given base errors (plain arrays)."""
    m = base.max() + cfg.eps_max
    gamma_dyn = (cfg.gamma * np.exp(-cfg.lam * base) if cfg.dynamic_gamma
                 else np.full_like(base, cfg.gamma))
    w = (1.0 - np.sqrt(base / m)) ** gamma_dyn
    l_dhem = cfg.alpha * w * base
    return w, gamma_dyn, l_dhem


def dhem_loss(enu_errors: np.ndarray, cfg: DhemConfig):
    """Printed equation chain on a (B, 3) batch of ENU errors.

    Returns (rmse-form scalar, dict with per-sample base/w/gamma/l_dhem).
    """
    enu_errors = np.atleast_2d(np.asarray(enu_errors, dtype=float))
    base = np.sqrt((enu_errors ** 2).sum(axis=1))
    w, gamma_dyn, l_dhem = dhem_breakdown(base, cfg)
    loss = math.sqrt(float((l_dhem ** 2).mean()))
    return loss, {"base": base, "w": w, "gamma_dynamic": gamma_dyn,
                  "l_dhem": l_dhem}


def dhem_loss_graph(enu_errors: Var, cfg: DhemConfig) -> Var:
    """Tape version of the same chain; the batch max is stop-gradient."""
    base = tape.sqrt(tape.reduce_sum(enu_errors * enu_errors, axis=1))
    m = tape.max_stopgrad(base) + cfg.eps_max
    if cfg.dynamic_gamma:
        gamma_dyn = cfg.gamma * tape.exp(base * (-cfg.lam))
    else:
        gamma_dyn = Var(np.full(base.value.shape, cfg.gamma))
    w = tape.powv(1.0 - tape.sqrt(base / m), gamma_dyn)
    l_dhem = cfg.alpha * w * base
    return tape.sqrt(tape.reduce_mean(l_dhem * l_dhem))


# --- optimizer and schedule -----------------------------------------------------

def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    """Cosine annealing restarting every t_max epochs."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    phase = (epoch % cfg.t_max) / cfg.t_max
    return cfg.eta_min + 0.5 * (cfg.lr0 - cfg.eta_min) * (1.0 + math.cos(math.pi * phase))


def adam_init(params: dict) -> dict:
    return {"step": 0,
            "m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()}}


def adam_step(params: dict, grads: dict, state: dict, lr: float,
              cfg: TrainConfig) -> dict:
    """Standard Adam with bias correction; returns updated parameters."""
    state["step"] += 1
    t = state["step"]
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    out = {}
    for name, p in params.items():
        g = grads[name]
        state["m"][name] = cfg.beta1 * state["m"][name] + (1 - cfg.beta1) * g
        state["v"][name] = cfg.beta2 * state["v"][name] + (1 - cfg.beta2) * g * g
        m_hat = state["m"][name] / bc1
        v_hat = state["v"][name] / bc2
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return out


# --- training loop ----------------------------------------------------------------

def _enu_rotation_for(prepared):
    for pe in prepared:
        if pe.truth is not None:
            ref = frames.ecef_to_geodetic(pe.truth)
            return frames.enu_rotation(ref), pe.truth
    raise NoGroundTruth("no epoch carries ground truth")


def train_epoch(prepared, params, pcfg: PipelineConfig, tcfg: TrainConfig,
                dcfg: DhemConfig, adam_state: dict, lr: float):
    """One chronological sweep with a mini-batch Adam step every
    ``batch_size`` contributing epochs.  Returns (params, mean loss, skipped)."""
    rot, _ = _enu_rotation_for(prepared)
    state = None
    batch_pe = []
    losses = []
    skipped = 0

    def flush(batch, current_params):
        nonlocal state
        leaves = network.as_leaves(current_params)
        ft = features.stack_feature_tensors([pe.features for pe in batch])
        out = network.forward(ft.values, ft.mask, leaves)
        errors = []
        for b, pe in enumerate(batch):
            dt = pe.t - state.t
            state_pred = ekf.time_update(state, dt, pcfg.process_noise)
            n = pe.n_sats
            try:
                dx, p_post, _ = ekf.measurement_update_graph(
                    state_pred.x, state_pred.P, pe.z, pe.sat_pos, pe.sys_idx,
                    out.r_diag[b, :n], out.v_comp[b, :n])
            except (SingularS, NotSPD) as exc:
                log.warning("t=%.3f update failed in training: %s", pe.t, exc)
                state = state_pred
                continue
            state = ekf.FilterState(x=state_pred.x + dx.value, P=p_post,
                                    t=pe.t)
            # predicted-minus-truth is a constant; only the meters-scale
            # increment varies inside the graph
            err_pred = rot @ (state_pred.x[ekf.POS] - pe.truth)
            err = Var(err_pred) + rot @ dx[ekf.POS]
            errors.append(err)
        if not errors:
            return current_params, None
        loss_var = dhem_loss_graph(tape.stack(errors), dcfg)
        loss = float(loss_var.value)
        if not math.isfinite(loss):
            raise DivergedLoss(
                f"loss {loss} at t={batch[-1].t}; "
                f"param norms: " + ", ".join(
                    f"{k}={np.linalg.norm(v):.3e}"
                    for k, v in current_params.items()))
        backward(loss_var)
        grads = network.grads_of(leaves)
        return adam_step(current_params, grads, adam_state, lr, tcfg), loss

    for pe in prepared:
        if not pe.ok:
            skipped += 1
            continue
        if pe.truth is None:
            raise NoGroundTruth(f"epoch t={pe.t} has no ground truth")
        if state is None or pe.t - state.t > pcfg.max_gap or pe.t <= state.t:
            # flush whatever is pending, then re-anchor from coarse
            if batch_pe:
                params, loss = flush(batch_pe, params)
                if loss is not None:
                    losses.append(loss)
                batch_pe = []
            state = ekf.init_filter(pe.coarse, pcfg.init, pe.t)
            continue
        batch_pe.append(pe)
        if len(batch_pe) == tcfg.batch_size:
            params, loss = flush(batch_pe, params)
            if loss is not None:
                losses.append(loss)
            batch_pe = []
    if batch_pe:
        params, loss = flush(batch_pe, params)
        if loss is not None:
            losses.append(loss)
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    return params, mean_loss, skipped


def validation_rmse(prepared_val, params, pcfg: PipelineConfig) -> float:
    """3D RMSE of the filtered positions against truth on a held-out slice."""
    solutions = run_filter(prepared_val, network_weights(params), pcfg)
    rot, ref = _enu_rotation_for(prepared_val)
    sq = []
    for pe, sol in zip(prepared_val, solutions):
        if not sol.valid or pe.truth is None:
            continue
        err = rot @ (sol.x[ekf.POS] - pe.truth)
        sq.append(float(err @ err))
    if not sq:
        return float("inf")
    return math.sqrt(float(np.mean(sq)))


def train(records, params0: dict, pcfg: PipelineConfig, tcfg: TrainConfig,
          dcfg: DhemConfig):
    """Full training run; returns (best-validation params, TrainReport)."""
    tcfg.validate()
    dcfg.validate()
    started = time.monotonic()
    n_val = max(1, int(round(len(records) * tcfg.val_fraction)))
    train_records = records[:-n_val] if n_val < len(records) else records
    val_records = records[-n_val:] if n_val < len(records) else records
    prepared_train = prepare_dataset(train_records, pcfg)
    prepared_val = prepare_dataset(val_records, pcfg)
    if not any(pe.ok for pe in prepared_train):
        raise NoGroundTruth("no usable training epochs")

    params = {k: v.copy() for k, v in params0.items()}
    adam_state = adam_init(params)
    report = TrainReport()
    best_params = {k: v.copy() for k, v in params.items()}
    for epoch in range(tcfg.epochs):
        lr = cosine_lr(epoch, tcfg)
        params, mean_loss, skipped = train_epoch(
            prepared_train, params, pcfg, tcfg, dcfg, adam_state, lr)
        val = validation_rmse(prepared_val, params, pcfg)
        report.mean_loss.append(mean_loss)
        report.val_rmse_3d.append(val)
        report.lr.append(lr)
        report.epochs_skipped.append(skipped)
        if val < report.best_val_rmse:
            report.best_val_rmse = val
            report.best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
        log.info("epoch %d: loss %.4f, val 3D RMSE %.3f m, lr %.2e",
                 epoch, mean_loss, val, lr)
    report.wall_time = time.monotonic() - started
    return best_params, report


def write_report_csv(report: TrainReport, path):
    """Per-epoch trace as CSV; wall time deliberately kept out so identical
    runs produce identical bytes."""
    lines = ["epoch,mean_loss,val_rmse_3d,lr,epochs_skipped"]
    for i, (loss, val, lr, skipped) in enumerate(zip(
            report.mean_loss, report.val_rmse_3d, report.lr,
            report.epochs_skipped)):
        lines.append(f"{i},{loss:.17g},{val:.17g},{lr:.17g},{skipped}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
