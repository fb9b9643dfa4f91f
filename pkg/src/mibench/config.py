"""Experiment configuration: strict INI-style files, validated up front.

The format is flat `key = value` lines under bracketed section headers, no
nesting.  Every key is checked against a per-experiment whitelist before
anything runs; unknown sections or keys are errors, as are values of the
wrong type.  `render_config` writes the fully-resolved configuration (all
defaults materialized) in a canonical order so a run's snapshot re-parses
to the identical experiment.
"""

import configparser
import io
import math
import os

from .coding import TrainingSchedule
from .errors import ConfigError
from .estimators import ALL_PAIRS, KINDS, SHIFTED, EstimatorSpec

EXPERIMENTS = ("awgn_estimators", "bsc_estimators", "autoencoder", "lemma_check")

_CANONICAL_KIND_ORDER = {k: i for i, k in enumerate(KINDS)}


def _parse_int(raw, key):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {raw!r}") from None


def _parse_float(raw, key):
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {raw!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{key} must be finite, got {raw!r}")
    return value


def _parse_int_list(raw, key):
    items = [s.strip() for s in raw.split(",") if s.strip()]
    if not items:
        raise ConfigError(f"{key} must list at least one integer")
    return tuple(_parse_int(s, key) for s in items)


def _parse_kind_list(raw, key):
    items = [s.strip() for s in raw.split(",") if s.strip()]
    if not items:
        raise ConfigError(f"{key} must list at least one estimator")
    for item in items:
        if item not in KINDS:
            raise ConfigError(f"{key}: unknown estimator {item!r}")
    if len(set(items)) != len(items):
        raise ConfigError(f"{key} lists an estimator twice")
    return tuple(sorted(items, key=_CANONICAL_KIND_ORDER.get))


def _parse_str(raw, key):
    return raw.strip()


# section -> key -> (parser, attribute name)
_EXPERIMENT_KEYS = {
    "kind": (_parse_str, "experiment"),
    "seeds": (_parse_int_list, "seeds"),
    "output_dir": (_parse_str, "output_dir"),
    "final_window": (_parse_int, "final_window"),
}
_CHANNEL_KEYS_AWGN = {
    "dim": (_parse_int, "dim"),
    "snr": (_parse_float, "snr"),
    "sigma_x2": (_parse_float, "sigma_x2"),
}
_CHANNEL_KEYS_BSC = {
    "flip_prob": (_parse_float, "flip_prob"),
}
_LOOP_KEYS = {
    "iters": (_parse_int, "iters"),
    "batch_size": (_parse_int, "batch_size"),
    "lr": (_parse_float, "lr"),
    "marginal_mode": (_parse_str, "marginal_mode"),
}
_ESTIMATORS_KEYS = {
    "kinds": (_parse_kind_list, "estimators"),
}
_SCHEDULE_KEYS = {
    "critic_pretrain_iters": _parse_int,
    "encoder_epochs": _parse_int,
    "encoder_iters_per_epoch": _parse_int,
    "critic_tune_iters_per_epoch": _parse_int,
    "decoder_epochs": _parse_int,
    "decoder_iters_per_epoch": _parse_int,
    "batch_size": _parse_int,
    "lr": _parse_float,
    "ebno_db": _parse_float,
}
_AUTOENCODER_KEYS = {
    "n_messages": (_parse_int, "n_messages"),
    "block_dim": (_parse_int, "block_dim"),
    "bler_trials": (_parse_int, "bler_trials"),
    "sweep_start_db": (_parse_float, "sweep_start_db"),
    "sweep_stop_db": (_parse_float, "sweep_stop_db"),
    "sweep_step_db": (_parse_float, "sweep_step_db"),
}
_LEMMA_KEYS = {
    "n_distributions": (_parse_int, "lemma_distributions"),
    "a_grid_points": (_parse_int, "lemma_grid_points"),
    "n_samples": (_parse_int, "lemma_samples"),
}
_ESTIMATOR_SECTION_KEYS = {
    "mine": {"ema_decay": _parse_float},
    "nwj": {},
    "nce": {},
    "smile": {"tau": _parse_float},
    "rje": {"tau": _parse_float, "a_strategy": _parse_str,
            "a_multiple": _parse_float, "a_max": _parse_float,
            "b_floor": _parse_float, "fixed_b": _parse_float},
}

_SECTIONS_BY_EXPERIMENT = {
    "awgn_estimators": {"experiment": _EXPERIMENT_KEYS,
                        "channel": _CHANNEL_KEYS_AWGN,
                        "loop": _LOOP_KEYS,
                        "estimators": _ESTIMATORS_KEYS},
    "bsc_estimators": {"experiment": _EXPERIMENT_KEYS,
                       "channel": _CHANNEL_KEYS_BSC,
                       "loop": _LOOP_KEYS,
                       "estimators": _ESTIMATORS_KEYS},
    "autoencoder": {"experiment": _EXPERIMENT_KEYS,
                    "estimators": _ESTIMATORS_KEYS,
                    "schedule": None,      # handled specially
                    "autoencoder": _AUTOENCODER_KEYS},
    "lemma_check": {"experiment": _EXPERIMENT_KEYS,
                    "lemma": _LEMMA_KEYS},
}


class ExperimentConfig:
    """Fully-resolved settings for one experiment."""

    def __init__(self, experiment):
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {experiment!r}")
        self.experiment = experiment
        self.seeds = (0, 1, 2, 3, 4)
        self.output_dir = "mibench_out"
        self.final_window = 50
        # channel (awgn_estimators / bsc_estimators)
        self.dim = 8
        self.snr = 4.0
        self.sigma_x2 = 1.0
        self.flip_prob = 0.11
        # estimator training loop
        self.iters = 500
        self.batch_size = 64
        self.lr = 0.005
        self.marginal_mode = ALL_PAIRS
        self.estimators = KINDS
        self.estimator_params = {k: {} for k in KINDS}
        # autoencoder
        self.schedule = TrainingSchedule()
        self.n_messages = 16
        self.block_dim = 2
        self.bler_trials = 100_000
        self.sweep_start_db = 0.0
        self.sweep_stop_db = 10.0
        self.sweep_step_db = 1.0
        # lemma check
        self.lemma_distributions = 100
        self.lemma_grid_points = 50
        self.lemma_samples = 10_000
        if experiment == "awgn_estimators":
            # At 8 dims / SNR 4 the log density ratio has a wide dynamic
            # range: tau = 5 saturates the SMILE clip (the partition term
            # stops restraining the critic), and the second-moment ratio
            # estimate that feeds RJE is noisy enough to destabilize it
            # without a floor.
            self.estimator_params["smile"]["tau"] = 10.0
            self.estimator_params["rje"]["b_floor"] = 20.0
        if experiment == "autoencoder":
            self.seeds = (0,)
            self.estimator_params["smile"]["tau"] = 10.0
            self.estimator_params["rje"]["fixed_b"] = 1.0
        if experiment == "lemma_check":
            self.seeds = (0,)

    def estimator_spec(self, kind) -> EstimatorSpec:
        if kind not in KINDS:
            raise ConfigError(f"unknown estimator kind {kind!r}")
        return EstimatorSpec(kind=kind, **self.estimator_params[kind])

    def validate(self):
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be nonnegative")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.final_window < 1:
            raise ConfigError("final_window must be positive")
        if self.experiment in ("awgn_estimators", "bsc_estimators"):
            if self.iters < 1 or self.batch_size < 2:
                raise ConfigError("need iters >= 1 and batch_size >= 2")
            if self.final_window > self.iters:
                raise ConfigError("final_window exceeds the iteration count")
            if self.lr < 0:
                raise ConfigError("lr must be nonnegative")
            if self.marginal_mode not in (ALL_PAIRS, SHIFTED):
                raise ConfigError(f"unknown marginal_mode {self.marginal_mode!r}")
            if self.marginal_mode == SHIFTED and "nce" in self.estimators:
                raise ConfigError("nce is incompatible with shifted marginals")
        if self.experiment == "awgn_estimators":
            if self.dim < 1:
                raise ConfigError("dim must be positive")
            if self.snr <= 0 or self.sigma_x2 <= 0:
                raise ConfigError("snr and sigma_x2 must be positive")
        if self.experiment == "bsc_estimators":
            if not 0.0 < self.flip_prob < 0.5:
                raise ConfigError("flip_prob must lie in (0, 0.5)")
        if self.experiment == "autoencoder":
            if self.bler_trials < 10_000:
                raise ConfigError("bler_trials must be at least 10000")
            if self.sweep_step_db <= 0 or self.sweep_stop_db < self.sweep_start_db:
                raise ConfigError("bad Eb/N0 sweep grid")
        if self.experiment == "lemma_check":
            if min(self.lemma_distributions, self.lemma_grid_points,
                   self.lemma_samples) < 1:
                raise ConfigError("lemma counts must be positive")
        for kind in KINDS:
            self.estimator_spec(kind)  # surfaces bad per-estimator params

    def sweep_points(self):
        points = []
        db = self.sweep_start_db
        while db <= self.sweep_stop_db + 1e-9:
            points.append(round(db, 6))
            db += self.sweep_step_db
        return tuple(points)


def default_config(experiment) -> ExperimentConfig:
    cfg = ExperimentConfig(experiment)
    cfg.validate()
    return cfg


def _apply_section(cfg, section, items):
    schema = _SECTIONS_BY_EXPERIMENT[cfg.experiment]
    if section.startswith("estimator."):
        kind = section.split(".", 1)[1]
        if kind not in KINDS:
            raise ConfigError(f"unknown estimator section [{section}]")
        if "estimators" not in schema:
            raise ConfigError(f"[{section}] not allowed for {cfg.experiment}")
        allowed = _ESTIMATOR_SECTION_KEYS[kind]
        for key, raw in items:
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            cfg.estimator_params[kind][key] = allowed[key](raw, f"{section}.{key}")
        return
    if section not in schema:
        raise ConfigError(f"unknown section [{section}] for {cfg.experiment}")
    if section == "schedule":
        for key, raw in items:
            if key not in _SCHEDULE_KEYS:
                raise ConfigError(f"unknown key {key!r} in [schedule]")
            setattr(cfg.schedule, key, _SCHEDULE_KEYS[key](raw, f"schedule.{key}"))
        return
    keys = schema[section]
    for key, raw in items:
        if key not in keys:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        parser, attr = keys[key]
        setattr(cfg, attr, parser(raw, f"{section}.{key}"))


def parse_config_text(text) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True,
                                       inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if "experiment" not in parser or "kind" not in parser["experiment"]:
        raise ConfigError("config must set kind under [experiment]")
    experiment = parser["experiment"]["kind"].strip()
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    cfg = ExperimentConfig(experiment)
    for section in parser.sections():
        _apply_section(cfg, section, list(parser[section].items()))
    # re-validate the schedule dataclass invariants after raw assignment
    cfg.schedule.__post_init__()
    cfg.validate()
    return cfg


def parse_config(path) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config_text(handle.read())


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def render_config(cfg: ExperimentConfig) -> str:
    """Canonical text form with every effective value spelled out."""
    out = io.StringIO()
    out.write("[experiment]\n")
    out.write(f"kind = {cfg.experiment}\n")
    out.write(f"seeds = {_fmt(cfg.seeds)}\n")
    out.write(f"output_dir = {cfg.output_dir}\n")
    out.write(f"final_window = {cfg.final_window}\n")
    if cfg.experiment == "awgn_estimators":
        out.write("\n[channel]\n")
        out.write(f"dim = {cfg.dim}\n")
        out.write(f"snr = {_fmt(cfg.snr)}\n")
        out.write(f"sigma_x2 = {_fmt(cfg.sigma_x2)}\n")
    if cfg.experiment == "bsc_estimators":
        out.write("\n[channel]\n")
        out.write(f"flip_prob = {_fmt(cfg.flip_prob)}\n")
    if cfg.experiment in ("awgn_estimators", "bsc_estimators"):
        out.write("\n[loop]\n")
        out.write(f"iters = {cfg.iters}\n")
        out.write(f"batch_size = {cfg.batch_size}\n")
        out.write(f"lr = {_fmt(cfg.lr)}\n")
        out.write(f"marginal_mode = {cfg.marginal_mode}\n")
    if cfg.experiment in ("awgn_estimators", "bsc_estimators", "autoencoder"):
        out.write("\n[estimators]\n")
        out.write(f"kinds = {_fmt(cfg.estimators)}\n")
        for kind in cfg.estimators:
            if kind in ("nwj", "nce"):
                continue  # no tunables
            spec = cfg.estimator_spec(kind)
            out.write(f"\n[estimator.{kind}]\n")
            if kind == "mine":
                out.write(f"ema_decay = {_fmt(spec.ema_decay)}\n")
            if kind in ("smile", "rje"):
                out.write(f"tau = {_fmt(spec.tau)}\n")
            if kind == "rje":
                out.write(f"a_strategy = {spec.a_strategy}\n")
                out.write(f"a_multiple = {_fmt(spec.a_multiple)}\n")
                out.write(f"a_max = {_fmt(spec.a_max)}\n")
                out.write(f"b_floor = {_fmt(spec.b_floor)}\n")
                out.write(f"fixed_b = {_fmt(spec.fixed_b)}\n")
    if cfg.experiment == "autoencoder":
        s = cfg.schedule
        out.write("\n[schedule]\n")
        out.write(f"critic_pretrain_iters = {s.critic_pretrain_iters}\n")
        out.write(f"encoder_epochs = {s.encoder_epochs}\n")
        out.write(f"encoder_iters_per_epoch = {s.encoder_iters_per_epoch}\n")
        out.write(f"critic_tune_iters_per_epoch = {s.critic_tune_iters_per_epoch}\n")
        out.write(f"decoder_epochs = {s.decoder_epochs}\n")
        out.write(f"decoder_iters_per_epoch = {s.decoder_iters_per_epoch}\n")
        out.write(f"batch_size = {s.batch_size}\n")
        out.write(f"lr = {_fmt(s.lr)}\n")
        out.write(f"ebno_db = {_fmt(s.ebno_db)}\n")
        out.write("\n[autoencoder]\n")
        out.write(f"n_messages = {cfg.n_messages}\n")
        out.write(f"block_dim = {cfg.block_dim}\n")
        out.write(f"bler_trials = {cfg.bler_trials}\n")
        out.write(f"sweep_start_db = {_fmt(cfg.sweep_start_db)}\n")
        out.write(f"sweep_stop_db = {_fmt(cfg.sweep_stop_db)}\n")
        out.write(f"sweep_step_db = {_fmt(cfg.sweep_step_db)}\n")
    if cfg.experiment == "lemma_check":
        out.write("\n[lemma]\n")
        out.write(f"n_distributions = {cfg.lemma_distributions}\n")
        out.write(f"a_grid_points = {cfg.lemma_grid_points}\n")
        out.write(f"n_samples = {cfg.lemma_samples}\n")
    return out.getvalue()
