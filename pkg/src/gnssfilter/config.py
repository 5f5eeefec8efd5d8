"""Run configuration: one JSON file covering every module, strict parsing.

Every key has a documented default (see docs/config.md); unknown keys are
rejected so typos surface immediately.  Angles are written in degrees in
the file and converted to radians here.  A single ``seed`` drives the
scenario, parameter initialization, and training.
"""

from dataclasses import dataclass, field
import json
import math

from . import models
from .coarse import QcConfig
from .ekf import InitConfig, ProcessNoiseConfig, MAX_GAP_S
from .errors import ConfigError
from .features import NormalizationSpec
from .frames import GeodeticPos
from .pipeline import PipelineConfig
from .sim import ErrorBudget, NlosConfig, ScenarioConfig
from .training import DhemConfig, TrainConfig


@dataclass
class RunConfig:
    seed: int = 0
    qc: QcConfig = field(default_factory=QcConfig)
    corrections: models.CorrectionConfig = field(
        default_factory=models.CorrectionConfig)
    norms: NormalizationSpec = field(default_factory=NormalizationSpec)
    n_max: int = 40
    init: InitConfig = field(default_factory=InitConfig)
    process_noise: ProcessNoiseConfig = field(default_factory=ProcessNoiseConfig)
    max_gap: float = MAX_GAP_S
    baseline_a: float = 0.3
    baseline_b: float = 0.3
    train: TrainConfig = field(default_factory=TrainConfig)
    dhem: DhemConfig = field(default_factory=DhemConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(qc=self.qc, corrections=self.corrections,
                              norms=self.norms, n_max=self.n_max,
                              init=self.init, process_noise=self.process_noise,
                              max_gap=self.max_gap,
                              baseline_a=self.baseline_a,
                              baseline_b=self.baseline_b)


def _check_keys(obj: dict, allowed, where: str):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}; "
                          f"allowed: {sorted(allowed)}")


def _number(obj, key, where, default):
    v = obj.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number")
    return float(v)


def _integer(obj, key, where, default):
    v = obj.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{key} must be an integer")
    return v


def _boolean(obj, key, where, default):
    v = obj.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{where}.{key} must be a boolean")
    return v


def _vector(obj, key, where, default, length):
    v = obj.get(key, list(default))
    if not (isinstance(v, list) and len(v) == length
            and all(isinstance(x, (int, float)) and not isinstance(x, bool)
                    for x in v)):
        raise ConfigError(f"{where}.{key} must be a list of {length} numbers")
    return tuple(float(x) for x in v)


def _parse_qc(obj) -> QcConfig:
    _check_keys(obj, ("elevation_mask_deg", "snr_min",
                      "residual_reject_factor", "min_sats_per_system"), "qc")
    d = QcConfig()
    cfg = QcConfig(
        elevation_mask=math.radians(_number(
            obj, "elevation_mask_deg", "qc",
            math.degrees(d.elevation_mask))),
        snr_min=_number(obj, "snr_min", "qc", d.snr_min),
        residual_reject_factor=_number(obj, "residual_reject_factor", "qc",
                                       d.residual_reject_factor),
        min_sats_per_system=_integer(obj, "min_sats_per_system", "qc",
                                     d.min_sats_per_system),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(f"qc: {exc}") from exc
    return cfg


def _parse_corrections(obj) -> models.CorrectionConfig:
    _check_keys(obj, ("use_saastamoinen", "use_klobuchar", "klobuchar_alpha",
                      "klobuchar_beta", "pressure_hpa", "temperature_k",
                      "humidity"), "corrections")
    d = models.CorrectionConfig()
    cfg = models.CorrectionConfig(
        use_saastamoinen=_boolean(obj, "use_saastamoinen", "corrections",
                                  d.use_saastamoinen),
        use_klobuchar=_boolean(obj, "use_klobuchar", "corrections",
                               d.use_klobuchar),
        klobuchar_alpha=_vector(obj, "klobuchar_alpha", "corrections",
                                d.klobuchar_alpha, 4),
        klobuchar_beta=_vector(obj, "klobuchar_beta", "corrections",
                               d.klobuchar_beta, 4),
        pressure_hpa=_number(obj, "pressure_hpa", "corrections", d.pressure_hpa),
        temperature_k=_number(obj, "temperature_k", "corrections",
                              d.temperature_k),
        humidity=_number(obj, "humidity", "corrections", d.humidity),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(f"corrections: {exc}") from exc
    return cfg


def _parse_features(obj):
    _check_keys(obj, ("n_max", "snr_scale", "ela_scale", "psr_scale_m",
                      "psr_clamp", "dpc_scale", "dpc_clamp"), "features")
    d = NormalizationSpec()
    norms = NormalizationSpec(
        snr_scale=_number(obj, "snr_scale", "features", d.snr_scale),
        ela_scale=_number(obj, "ela_scale", "features", d.ela_scale),
        psr_scale=_number(obj, "psr_scale_m", "features", d.psr_scale),
        psr_clamp=_number(obj, "psr_clamp", "features", d.psr_clamp),
        dpc_scale=_number(obj, "dpc_scale", "features", d.dpc_scale),
        dpc_clamp=_number(obj, "dpc_clamp", "features", d.dpc_clamp),
    )
    n_max = _integer(obj, "n_max", "features", 40)
    if n_max < 4:
        raise ConfigError("features.n_max must be at least 4")
    return norms, n_max


def _parse_filter(obj):
    _check_keys(obj, ("sigma_pos", "sigma_vel", "sigma_clock", "sigma_drift",
                      "sigma_isb", "q_velocity", "q_clock_drift", "q_isb",
                      "max_gap_s"), "filter")
    di, dq = InitConfig(), ProcessNoiseConfig()
    init = InitConfig(
        sigma_pos=_number(obj, "sigma_pos", "filter", di.sigma_pos),
        sigma_vel=_number(obj, "sigma_vel", "filter", di.sigma_vel),
        sigma_clock=_number(obj, "sigma_clock", "filter", di.sigma_clock),
        sigma_drift=_number(obj, "sigma_drift", "filter", di.sigma_drift),
        sigma_isb=_number(obj, "sigma_isb", "filter", di.sigma_isb),
    )
    q = ProcessNoiseConfig(
        velocity=_number(obj, "q_velocity", "filter", dq.velocity),
        clock_drift=_number(obj, "q_clock_drift", "filter", dq.clock_drift),
        isb=_number(obj, "q_isb", "filter", dq.isb),
    )
    try:
        init.validate()
        q.validate()
    except ValueError as exc:
        raise ConfigError(f"filter: {exc}") from exc
    return init, q, _number(obj, "max_gap_s", "filter", MAX_GAP_S)


def _parse_train(obj) -> TrainConfig:
    _check_keys(obj, ("epochs", "batch_size", "lr0", "t_max", "eta_min",
                      "beta1", "beta2", "adam_eps", "val_fraction"), "train")
    d = TrainConfig()
    return TrainConfig(
        epochs=_integer(obj, "epochs", "train", d.epochs),
        batch_size=_integer(obj, "batch_size", "train", d.batch_size),
        lr0=_number(obj, "lr0", "train", d.lr0),
        t_max=_integer(obj, "t_max", "train", d.t_max),
        eta_min=_number(obj, "eta_min", "train", d.eta_min),
        beta1=_number(obj, "beta1", "train", d.beta1),
        beta2=_number(obj, "beta2", "train", d.beta2),
        adam_eps=_number(obj, "adam_eps", "train", d.adam_eps),
        val_fraction=_number(obj, "val_fraction", "train", d.val_fraction),
    )


def _parse_dhem(obj) -> DhemConfig:
    _check_keys(obj, ("alpha", "gamma", "lambda", "dynamic_gamma", "eps_max"),
                "dhem")
    d = DhemConfig()
    return DhemConfig(
        alpha=_number(obj, "alpha", "dhem", d.alpha),
        gamma=_number(obj, "gamma", "dhem", d.gamma),
        lam=_number(obj, "lambda", "dhem", d.lam),
        dynamic_gamma=_boolean(obj, "dynamic_gamma", "dhem", d.dynamic_gamma),
        eps_max=_number(obj, "eps_max", "dhem", d.eps_max),
    )


def _parse_nlos(obj) -> NlosConfig:
    _check_keys(obj, ("prob", "bias_min_m", "bias_max_m", "snr_drop_db",
                      "dwell_mean_s", "low_elev_multiplier",
                      "low_elev_threshold_deg"), "scenario.budget.nlos")
    d = NlosConfig()
    return NlosConfig(
        prob=_number(obj, "prob", "nlos", d.prob),
        bias_min=_number(obj, "bias_min_m", "nlos", d.bias_min),
        bias_max=_number(obj, "bias_max_m", "nlos", d.bias_max),
        snr_drop_db=_number(obj, "snr_drop_db", "nlos", d.snr_drop_db),
        dwell_mean_s=_number(obj, "dwell_mean_s", "nlos", d.dwell_mean_s),
        low_elev_multiplier=_number(obj, "low_elev_multiplier", "nlos",
                                    d.low_elev_multiplier),
        low_elev_threshold=math.radians(_number(
            obj, "low_elev_threshold_deg", "nlos",
            math.degrees(d.low_elev_threshold))),
    )


def _parse_budget(obj) -> ErrorBudget:
    _check_keys(obj, ("noise_sigma_m", "elevation_weighted_noise",
                      "clock_bias_m", "clock_drift_mps", "isb_m", "sat_clock",
                      "tropo", "iono", "dropout_prob", "nlos"),
                "scenario.budget")
    d = ErrorBudget()
    nlos_obj = obj.get("nlos", {})
    if not isinstance(nlos_obj, dict):
        raise ConfigError("scenario.budget.nlos must be an object")
    return ErrorBudget(
        noise_sigma=_number(obj, "noise_sigma_m", "budget", d.noise_sigma),
        elevation_weighted_noise=_boolean(obj, "elevation_weighted_noise",
                                          "budget", d.elevation_weighted_noise),
        clock_bias=_number(obj, "clock_bias_m", "budget", d.clock_bias),
        clock_drift=_number(obj, "clock_drift_mps", "budget", d.clock_drift),
        isb=_vector(obj, "isb_m", "budget", d.isb, 3),
        sat_clock=_boolean(obj, "sat_clock", "budget", d.sat_clock),
        tropo=_boolean(obj, "tropo", "budget", d.tropo),
        iono=_boolean(obj, "iono", "budget", d.iono),
        dropout_prob=_number(obj, "dropout_prob", "budget", d.dropout_prob),
        nlos=_parse_nlos(nlos_obj),
    )


def _parse_scenario(obj, default_seed: int) -> ScenarioConfig:
    _check_keys(obj, ("seed", "duration_s", "rate_hz", "constellation",
                      "shell_radius_m", "waypoints", "budget", "name"),
                "scenario")
    d = ScenarioConfig()
    constellation = obj.get("constellation", dict(d.constellation))
    if not (isinstance(constellation, dict)
            and all(isinstance(v, int) and not isinstance(v, bool)
                    for v in constellation.values())):
        raise ConfigError("scenario.constellation must map system -> count")
    waypoints = d.waypoints
    if "waypoints" in obj:
        raw = obj["waypoints"]
        if not (isinstance(raw, list) and raw
                and all(isinstance(w, list) and len(w) == 4 for w in raw)):
            raise ConfigError("scenario.waypoints must be a list of "
                              "[t_s, lat_deg, lon_deg, height_m]")
        waypoints = [(float(w[0]),
                      GeodeticPos(math.radians(float(w[1])),
                                  math.radians(float(w[2])), float(w[3])))
                     for w in raw]
    budget_obj = obj.get("budget", {})
    if not isinstance(budget_obj, dict):
        raise ConfigError("scenario.budget must be an object")
    name = obj.get("name", d.name)
    if not isinstance(name, str):
        raise ConfigError("scenario.name must be a string")
    return ScenarioConfig(
        seed=_integer(obj, "seed", "scenario", default_seed),
        duration=_number(obj, "duration_s", "scenario", d.duration),
        rate=_number(obj, "rate_hz", "scenario", d.rate),
        constellation=dict(constellation),
        shell_radius=_number(obj, "shell_radius_m", "scenario", d.shell_radius),
        waypoints=waypoints,
        budget=_parse_budget(budget_obj),
        name=name,
    )


SECTIONS = ("seed", "qc", "corrections", "features", "filter", "baseline",
            "train", "dhem", "scenario")


def parse_config(obj: dict) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(obj, SECTIONS, "config")
    for section in ("qc", "corrections", "features", "filter", "baseline",
                    "train", "dhem", "scenario"):
        if section in obj and not isinstance(obj[section], dict):
            raise ConfigError(f"{section} must be an object")
    seed = _integer(obj, "seed", "config", 0)
    norms, n_max = _parse_features(obj.get("features", {}))
    init, q, max_gap = _parse_filter(obj.get("filter", {}))
    baseline = obj.get("baseline", {})
    _check_keys(baseline, ("elev_a", "elev_b"), "baseline")
    cfg = RunConfig(
        seed=seed,
        qc=_parse_qc(obj.get("qc", {})),
        corrections=_parse_corrections(obj.get("corrections", {})),
        norms=norms, n_max=n_max,
        init=init, process_noise=q, max_gap=max_gap,
        baseline_a=_number(baseline, "elev_a", "baseline", 0.3),
        baseline_b=_number(baseline, "elev_b", "baseline", 0.3),
        train=_parse_train(obj.get("train", {})),
        dhem=_parse_dhem(obj.get("dhem", {})),
        scenario=_parse_scenario(obj.get("scenario", {}), seed),
    )
    cfg.train.seed = seed
    return cfg


def load_config(path=None) -> RunConfig:
    """Load a config file; None gives all defaults."""
    if path is None:
        return parse_config({})
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(obj)
