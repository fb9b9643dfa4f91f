"""Canned experiments, multi-seed statistics and CSV emission.

Each experiment runner consumes a validated ExperimentConfig and returns a
RunRecord whose rows are fully sorted, so identical config + seeds always
produce byte-identical CSV files.  Workers fan out over (estimator, seed)
jobs with isolated RNG streams; results are merged by sorted key, never by
completion order.  Files are written to a temporary name and atomically
renamed, so a crashed run never leaves a partial CSV behind.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channels import awgn_true_mi_bits, bsc_true_mi_bits, sample_awgn_joint, \
    sample_bsc_joint
from .coding import MessageSet, evaluate_bler, export_constellation, \
    run_autoencoder_training
from .config import ExperimentConfig, render_config
from .errors import ConfigError, NumericError
from .estimators import critic_for, fit_critic, rje_inner_bound
from .rng import STREAM_DATA, STREAM_EVAL, STREAM_INIT, make_rng

CURVE_HEADER = ("step", "estimator", "seed", "estimate_bits")
SUMMARY_HEADER = ("estimator", "true_mi_bits", "mean_bias_bits",
                  "variance_bits2", "seeds")
BLER_HEADER = ("ebno_db", "bler", "trials", "seed")
LEMMA_HEADER = ("dist", "family", "n_samples", "b", "a", "bound_nats",
                "log_mean_nats", "ok")

MIN_SUMMARY_SEEDS = 5


def worker_count() -> int:
    raw = os.environ.get("MIBENCH_THREADS", "")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"MIBENCH_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise ConfigError("MIBENCH_THREADS must be >= 1")
        return n
    return min(4, os.cpu_count() or 1)


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise NumericError(f"refusing to write non-finite CSV cell {value!r}")
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: str, header, rows) -> None:
    """Schema-check the rows, then write atomically (temp file + rename)."""
    width = len(header)
    lines = [",".join(header)]
    for row in rows:
        if len(row) != width:
            raise ConfigError(
                f"row width {len(row)} does not match header width {width}")
        lines.append(",".join(_cell(v) for v in row))
    text = "\n".join(lines) + "\n"
    _atomic_write(path, text)


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)
    os.replace(tmp, path)


@dataclass
class RunRecord:
    experiment: str
    config_text: str
    true_mi_bits: float
    curve_rows: list          # (step, estimator, seed, estimate_bits)
    summary_rows: list        # (estimator, true_mi, bias, variance, n_seeds)
    bler_rows: dict = field(default_factory=dict)           # kind -> rows
    constellations: dict = field(default_factory=dict)      # (kind, seed) -> array


def final_window_means(curves: dict, window: int) -> dict:
    """Mean of each trace's last `window` entries, keyed like `curves`."""
    out = {}
    for key, trace in curves.items():
        trace = np.asarray(trace)
        if window > trace.size:
            raise ConfigError(f"final window {window} exceeds trace length {trace.size}")
        out[key] = float(np.mean(trace[-window:]))
    return out


def summarize_bias_variance(curves: dict, true_mi_bits: float, window: int):
    """Per-estimator bias and across-seed variance of final-window means.

    `curves` maps (estimator, seed) to a per-step trace in bits.  Refuses
    to summarize estimators observed with fewer than 5 seeds.
    """
    finals = final_window_means(curves, window)
    by_kind = {}
    for (kind, seed), value in finals.items():
        by_kind.setdefault(kind, []).append((seed, value))
    rows = []
    for kind in sorted(by_kind):
        values = [v for _, v in sorted(by_kind[kind])]
        if len(values) < MIN_SUMMARY_SEEDS:
            raise ConfigError(
                f"estimator {kind!r} has {len(values)} seeds; "
                f"need >= {MIN_SUMMARY_SEEDS} for bias/variance summary")
        arr = np.asarray(values)
        rows.append((kind, true_mi_bits, float(np.mean(arr) - true_mi_bits),
                     float(np.var(arr, ddof=1)), len(values)))
    return rows


def _run_jobs(jobs, fn):
    """Evaluate fn over jobs with a capped thread pool; order-preserving."""
    workers = min(worker_count(), len(jobs))
    if workers <= 1:
        return [fn(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _estimator_curves(cfg: ExperimentConfig, make_source, dx: int, dy: int):
    """Train every configured estimator on every seed; return curves dict."""

    def job(item):
        kind, seed = item
        spec = cfg.estimator_spec(kind)
        critic = critic_for(spec, dx, dy, make_rng(seed, STREAM_INIT))
        result = fit_critic(critic, make_source, spec, cfg.iters, cfg.lr,
                            make_rng(seed, STREAM_DATA), cfg.marginal_mode)
        return (kind, seed), result.trace_bits

    jobs = [(kind, seed) for kind in cfg.estimators for seed in cfg.seeds]
    return dict(_run_jobs(jobs, job))


def _curve_rows(curves: dict):
    rows = []
    for (kind, seed), trace in curves.items():
        rows.extend((step, kind, seed, float(v)) for step, v in enumerate(trace))
    rows.sort(key=lambda r: (r[1], r[2], r[0]))
    return rows


def run_awgn_estimators(cfg: ExperimentConfig) -> RunRecord:
    """Estimator comparison on the d-dimensional AWGN channel."""
    sigma_z2 = cfg.sigma_x2 / cfg.snr
    true_mi = float(awgn_true_mi_bits(cfg.sigma_x2, sigma_z2, cfg.dim))

    def source(rng):
        return sample_awgn_joint(cfg.sigma_x2, sigma_z2, cfg.dim,
                                 cfg.batch_size, rng)

    curves = _estimator_curves(cfg, source, cfg.dim, cfg.dim)
    summary = summarize_bias_variance(curves, true_mi, cfg.final_window) \
        if len(cfg.seeds) >= MIN_SUMMARY_SEEDS else []
    return RunRecord(experiment=cfg.experiment, config_text=render_config(cfg),
                     true_mi_bits=true_mi, curve_rows=_curve_rows(curves),
                     summary_rows=summary)


def run_bsc_estimators(cfg: ExperimentConfig) -> RunRecord:
    """Estimator comparison on the binary symmetric channel."""
    true_mi = float(bsc_true_mi_bits(cfg.flip_prob))

    def source(rng):
        return sample_bsc_joint(cfg.flip_prob, cfg.batch_size, rng)

    curves = _estimator_curves(cfg, source, 1, 1)
    summary = summarize_bias_variance(curves, true_mi, cfg.final_window) \
        if len(cfg.seeds) >= MIN_SUMMARY_SEEDS else []
    return RunRecord(experiment=cfg.experiment, config_text=render_config(cfg),
                     true_mi_bits=true_mi, curve_rows=_curve_rows(curves),
                     summary_rows=summary)


def run_autoencoder(cfg: ExperimentConfig) -> RunRecord:
    """Full encoder/critic/decoder pipeline plus BLER sweep per estimator.

    The MI trace concatenates pretraining and alternating-phase estimates.
    true_mi_bits is the source entropy log2(M) -- the ceiling the learned
    system's MI can approach, since no closed form exists for the learned
    input distribution.
    """
    message_set = MessageSet(cfg.n_messages, cfg.block_dim)
    source_entropy = math.log2(cfg.n_messages)
    sweep = cfg.sweep_points()

    def job(item):
        kind, seed = item
        spec = cfg.estimator_spec(kind)
        system = run_autoencoder_training(message_set, spec, cfg.schedule, seed)
        trace = np.concatenate([system.pretrain_trace_bits,
                                system.encoder_trace_bits])
        rng_eval = make_rng(seed, STREAM_EVAL)
        bler = [(db, evaluate_bler(system.encoder, system.decoder, message_set,
                                   db, cfg.bler_trials, rng_eval).bler,
                 cfg.bler_trials, seed) for db in sweep]
        table = export_constellation(system.encoder, message_set)
        return (kind, seed), trace, bler, table

    jobs = [(kind, seed) for kind in cfg.estimators for seed in cfg.seeds]
    results = _run_jobs(jobs, job)

    curves, bler_rows, constellations = {}, {}, {}
    for (kind, seed), trace, bler, table in results:
        curves[(kind, seed)] = trace
        bler_rows.setdefault(kind, []).extend(bler)
        constellations[(kind, seed)] = table
    for kind in bler_rows:
        bler_rows[kind].sort(key=lambda r: (r[0], r[3]))
    summary = summarize_bias_variance(curves, source_entropy, cfg.final_window) \
        if len(cfg.seeds) >= MIN_SUMMARY_SEEDS else []
    return RunRecord(experiment=cfg.experiment, config_text=render_config(cfg),
                     true_mi_bits=source_entropy, curve_rows=_curve_rows(curves),
                     summary_rows=summary, bler_rows=bler_rows,
                     constellations=constellations)


# Families cycled through by the reverse-Jensen sweep.
LEMMA_FAMILIES = ("lognormal", "exponential", "constant", "two_point")


@dataclass
class LemmaReport:
    checked: int
    violations: int
    rows: list
    config_text: str

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _lemma_samples(family: str, n: int, rng) -> np.ndarray:
    if family == "lognormal":
        return rng.lognormal(0.0, 1.0, size=n)
    if family == "exponential":
        return rng.exponential(1.0, size=n)
    if family == "constant":
        return np.full(n, rng.uniform(0.1, 10.0))
    if family == "two_point":
        lo, hi = np.sort(rng.uniform(0.05, 5.0, size=2))
        p = rng.uniform(0.05, 0.95)
        return np.where(rng.random(n) < p, hi, max(lo, 1e-3))
    raise ConfigError(f"unknown sample family {family!r}")


def run_lemma_check(cfg: ExperimentConfig) -> LemmaReport:
    """Sweep the reverse-Jensen bound against log-mean over random inputs.

    For each sample set, b is the exact second-moment ratio and a runs over
    a uniform grid spanning (b, 100b].  Every grid point must satisfy
    bound >= log(mean(X)).
    """
    rng = make_rng(cfg.seeds[0], STREAM_DATA)
    rows = []
    violations = 0
    for dist in range(cfg.lemma_distributions):
        family = LEMMA_FAMILIES[dist % len(LEMMA_FAMILIES)]
        x = _lemma_samples(family, cfg.lemma_samples, rng)
        m1 = float(np.mean(x))
        b = max(1.0, float(np.mean(x ** 2)) / m1 ** 2)
        log_mean = math.log(m1)
        grid = b * (1.0 + 99.0 * np.arange(1, cfg.lemma_grid_points + 1)
                    / cfg.lemma_grid_points)
        for a in grid:
            bound = rje_inner_bound(x, float(a), b)
            ok = bound >= log_mean
            violations += 0 if ok else 1
            rows.append((dist, family, cfg.lemma_samples, b, float(a),
                         bound, log_mean, int(ok)))
    return LemmaReport(checked=len(rows), violations=violations, rows=rows,
                       config_text=render_config(cfg))


def _constellation_header(block_dim: int):
    return ("message",) + tuple(f"x{i}" for i in range(block_dim))


def write_outputs(record, out_dir: str) -> list:
    """Write every artifact of a run; returns the file paths written."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def emit(name, header, rows):
        path = os.path.join(out_dir, name)
        write_csv(path, header, rows)
        written.append(path)

    config_path = os.path.join(out_dir, "config.ini")
    _atomic_write(config_path, record.config_text)
    written.append(config_path)

    if isinstance(record, LemmaReport):
        emit("lemma.csv", LEMMA_HEADER, record.rows)
        return written

    emit("curves.csv", CURVE_HEADER, record.curve_rows)
    if record.summary_rows:
        emit("summary.csv", SUMMARY_HEADER, record.summary_rows)
    for kind, rows in sorted(record.bler_rows.items()):
        emit(f"bler_{kind}.csv", BLER_HEADER, rows)
    for (kind, seed), table in sorted(record.constellations.items()):
        header = _constellation_header(table.shape[1])
        rows = [(m, *map(float, table[m])) for m in range(table.shape[0])]
        emit(f"constellation_{kind}_seed{seed}.csv", header, rows)
    return written


RUNNERS = {
    "awgn_estimators": run_awgn_estimators,
    "bsc_estimators": run_bsc_estimators,
    "autoencoder": run_autoencoder,
    "lemma_check": run_lemma_check,
}


def run_experiment(cfg: ExperimentConfig):
    cfg.validate()
    return RUNNERS[cfg.experiment](cfg)
