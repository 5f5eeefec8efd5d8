"""Extended Kalman filter over an 11-state receiver model.

State: [position (3), velocity (3), clock bias, clock drift, ISB (3)] with
position/clock in meters and rates in meters per second.  Constant-velocity
dynamics; the clock drift and ISB states are driven by white noise.  The
measurement update consumes a learned diagonal R and an innovation
compensation vector, computes the innovation nonlinearly from predicted
pseudoranges, solves the innovation covariance as an SPD system, and
applies the Joseph-form covariance update.  The update is built on the
autodiff tape so training can differentiate through it; plain arrays pass
through as constants at no extra cost.
"""

from dataclasses import dataclass

import numpy as np

from . import tape
from .coarse import CoarseSolution
from .data import SYSTEMS
from .errors import GapTooLarge, SingularS
from .tape import Var, as_var

NSTATE = 11
POS = slice(0, 3)
VEL = slice(3, 6)
CLOCK = 6
DRIFT = 7
ISB = slice(8, 11)

MAX_GAP_S = 30.0
S_COND_LIMIT = 1e14


@dataclass
class InitConfig:
    sigma_pos: float = 10.0      # [m]
    sigma_vel: float = 1.0       # [m/s]
    sigma_clock: float = 100.0   # [m]
    sigma_drift: float = 10.0    # [m/s]
    sigma_isb: float = 10.0      # [m]

    def validate(self):
        for name in ("sigma_pos", "sigma_vel", "sigma_clock", "sigma_drift",
                     "sigma_isb"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class ProcessNoiseConfig:
    velocity: float = 1.0        # [m^2/s^3] per axis
    clock_drift: float = 0.1     # [m^2/s^3]
    isb: float = 1e-4            # [m^2/s] random walk

    def validate(self):
        if self.velocity < 0 or self.clock_drift < 0 or self.isb < 0:
            raise ValueError("process noise densities must be nonnegative")


@dataclass
class FilterState:
    x: np.ndarray      # (11,)
    P: np.ndarray      # (11, 11)
    t: float


@dataclass
class UpdateDiagnostics:
    """Per-epoch innovation statistics."""

    innovation: np.ndarray          # z - f(x_pred)
    compensated: np.ndarray         # innovation + v_comp
    s_diag: np.ndarray
    nis_per_sat: np.ndarray         # innovation_i^2 / S_ii
    nis_total: float                # v^T S^-1 v


def init_filter(coarse_sol: CoarseSolution, cfg: InitConfig, t: float) -> FilterState:
    """Position, clock, and ISB from coarse positioning; rates zero."""
    x = np.zeros(NSTATE)
    x[POS] = coarse_sol.rx_pos
    x[CLOCK] = coarse_sol.clock_bias
    x[ISB] = coarse_sol.isb
    p_diag = np.concatenate([
        np.full(3, cfg.sigma_pos ** 2),
        np.full(3, cfg.sigma_vel ** 2),
        [cfg.sigma_clock ** 2, cfg.sigma_drift ** 2],
        np.full(3, cfg.sigma_isb ** 2),
    ])
    return FilterState(x=x, P=np.diag(p_diag), t=t)


def transition_matrix(dt: float) -> np.ndarray:
    f = np.eye(NSTATE)
    f[0, 3] = f[1, 4] = f[2, 5] = dt
    f[CLOCK, DRIFT] = dt
    return f


def process_noise(dt: float, cfg: ProcessNoiseConfig) -> np.ndarray:
    q = np.zeros((NSTATE, NSTATE))
    q3 = dt ** 3 / 3.0
    q2 = dt ** 2 / 2.0
    for axis in range(3):
        q[axis, axis] = cfg.velocity * q3
        q[axis, axis + 3] = q[axis + 3, axis] = cfg.velocity * q2
        q[axis + 3, axis + 3] = cfg.velocity * dt
    q[CLOCK, CLOCK] = cfg.clock_drift * q3
    q[CLOCK, DRIFT] = q[DRIFT, CLOCK] = cfg.clock_drift * q2
    q[DRIFT, DRIFT] = cfg.clock_drift * dt
    q[ISB, ISB] = cfg.isb * dt * np.eye(3)
    return q


def time_update(state: FilterState, dt: float,
                cfg: ProcessNoiseConfig) -> FilterState:
    """Constant-velocity propagation; gaps beyond 30 s require re-init."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if dt > MAX_GAP_S:
        raise GapTooLarge(dt)
    f = transition_matrix(dt)
    return FilterState(x=f @ state.x,
                       P=f @ state.P @ f.T + process_noise(dt, cfg),
                       t=state.t + dt)


def system_indices(observations) -> np.ndarray:
    """0=GPS, 1=BDS, 2=GAL, 3=GLO per observation."""
    return np.array([SYSTEMS.index(o.system) for o in observations], dtype=int)


def predicted_measurement(x: np.ndarray, sat_pos: np.ndarray,
                          sys_idx: np.ndarray):
    """Nonlinear predicted pseudoranges and the (N, 11) Jacobian at x."""
    delta = sat_pos - x[POS]
    ranges = np.linalg.norm(delta, axis=1)
    n = sat_pos.shape[0]
    h = np.zeros((n, NSTATE))
    h[:, POS] = -delta / ranges[:, None]
    h[:, CLOCK] = 1.0
    pred = ranges + x[CLOCK]
    for i, s in enumerate(sys_idx):
        if s > 0:
            h[i, 8 + s - 1] = 1.0
            pred[i] += x[8 + s - 1]
    return pred, h


def measurement_update_graph(x_pred: np.ndarray, p_pred: np.ndarray,
                             z: np.ndarray, sat_pos: np.ndarray,
                             sys_idx: np.ndarray, r_diag, v_comp):
    """Tape-recorded measurement update.

    ``r_diag``/``v_comp`` may be Vars (training) or arrays (inference);
    everything else is a constant.  Returns the state increment
    K (v + v_comp) as a Var, the Joseph-form posterior covariance as a
    plain array (gradients are truncated at epoch boundaries), and
    diagnostics.  Keeping the ~6.4e6 m absolute state out of the recorded
    graph preserves full float precision in the meters-scale quantities
    that gradients (and finite-difference checks) actually see.

    Raises SingularS / NotSPD when the innovation covariance is unusable;
    callers pass the state through unchanged in that case.
    """
    r_diag = as_var(r_diag)
    v_comp = as_var(v_comp)
    pred, h = predicted_measurement(x_pred, sat_pos, sys_idx)
    innovation = z - pred
    hp = h @ p_pred                      # (N, 11)
    s_geom = hp @ h.T
    s = Var(s_geom) + tape.diag_embed(r_diag)
    eigs = np.linalg.eigvalsh(s.value)
    if eigs[0] <= 0.0 or eigs[-1] / eigs[0] > S_COND_LIMIT:
        raise SingularS(f"innovation covariance condition "
                        f"{eigs[-1] / max(eigs[0], 1e-300):.2e}")
    gain = tape.transpose(tape.spd_solve(s, Var(hp)))     # (11, N)
    dx = gain @ (Var(innovation) + v_comp)

    k = gain.value
    ikh = np.eye(NSTATE) - k @ h
    p_post = ikh @ p_pred @ ikh.T + (k * r_diag.value) @ k.T

    s_diag = np.diagonal(s.value)
    nis_total = float(innovation @ np.linalg.solve(s.value, innovation))
    diag = UpdateDiagnostics(
        innovation=innovation,
        compensated=innovation + v_comp.value,
        s_diag=s_diag.copy(),
        nis_per_sat=innovation ** 2 / s_diag,
        nis_total=nis_total,
    )
    return dx, p_post, diag


def measurement_update(state: FilterState, z: np.ndarray, sat_pos: np.ndarray,
                       sys_idx: np.ndarray, r_diag: np.ndarray,
                       v_comp: np.ndarray):
    """Plain-array measurement update: returns (new state, diagnostics)."""
    if np.any(np.asarray(r_diag) <= 0):
        raise ValueError("r_diag must be strictly positive")
    dx, p_post, diag = measurement_update_graph(
        state.x, state.P, z, sat_pos, sys_idx, r_diag, v_comp)
    return FilterState(x=state.x + dx.value, P=p_post, t=state.t), diag


def elevation_model_r(elevations: np.ndarray, a: float, b: float) -> np.ndarray:
    """Conventional fixed-weight variance model r = (a + b/sin(el))^2."""
    sin_el = np.maximum(np.sin(elevations), 1e-3)
    return (a + b / sin_el) ** 2
