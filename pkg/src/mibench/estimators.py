"""Variational mutual-information estimators over critic scores.

Five objectives share one interface: given a batch of critic scores split
into joint and marginal views they return a scalar estimate (nats and bits)
plus, for training, exact gradients with respect to every score.  The
estimate is always `joint_mean - partition_term`, where the partition term
is the estimator-specific functional of the marginal scores:

  mine   log of the mean of e^f over marginal pairs
  nwj    mean of e^(f-1) over marginal pairs
  nce    mean over rows of (log-sum-exp of the row - log K)
  smile  like mine with e^f clipped to [e^-tau, e^tau]
  rje    a reverse-Jensen upper bound on the mine partition term, built
         from the first two moments of e^f and a free parameter a > b

Because the reverse-Jensen bound dominates the log-mean partition term,
the rje estimate can never exceed the mine estimate on the same scores.
Every averaged exponential goes through a max-shifted log-mean-exp.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, NumericError, ShapeError
from .nn import SCALED_TANH, grads_to_vector, mlp_backward, mlp_forward, mlp_init, \
    params_to_vector, vector_to_params
from .optim import NadamState, nadam_step
from .sampling import ScoreMatrix, ScorePairs, critic_inputs, critic_inputs_shifted, \
    split_scores, split_scores_shifted

LN2 = math.log(2.0)

KINDS = ("mine", "nwj", "nce", "smile", "rje")
A_STRATEGIES = ("fixed_multiple", "golden_section")

ALL_PAIRS = "all_pairs"
SHIFTED = "shifted"

# Default critic bound / clip per estimator kind (only smile and rje use tau).
DEFAULT_TAU = {"smile": 5.0, "rje": 6.0}


@dataclass
class EstimatorSpec:
    """Which estimator to run and its hyperparameters."""

    kind: str
    tau: float = 0.0            # smile clip half-width / rje critic bound
    ema_decay: float = 0.99     # mine gradient denominator smoothing
    a_strategy: str = "fixed_multiple"
    a_multiple: float = 2.0     # fixed_multiple: a = a_multiple * b
    a_max: float = 1.0e4        # golden_section upper bracket
    b_floor: float = 1.0        # lower bound on the rje moment ratio
    fixed_b: float = 0.0        # > 0 pins b globally instead of per batch

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown estimator kind {self.kind!r}")
        if self.tau == 0.0:
            self.tau = DEFAULT_TAU.get(self.kind, 0.0)
        if self.kind in ("smile", "rje") and not self.tau > 0:
            raise ConfigError(f"{self.kind} requires tau > 0")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if self.a_strategy not in A_STRATEGIES:
            raise ConfigError(f"unknown a_strategy {self.a_strategy!r}")
        if self.a_multiple <= 1.0:
            raise ConfigError("fixed_multiple needs a_multiple > 1 so that a > b")
        if self.b_floor < 1.0:
            raise ConfigError(f"b_floor must be >= 1, got {self.b_floor}")
        if self.fixed_b and self.fixed_b < 1.0:
            raise ConfigError("fixed_b, when set, must be >= 1")


@dataclass
class MineEmaState:
    """Bias-corrected running mean of e^f over marginal batches.

    The raw accumulator follows ema <- d*ema + (1-d)*batch_mean from zero;
    reads divide by (1 - d^t) so the first batch comes through unshrunk and
    early steps average recent batches instead of dragging the zero init.
    """

    raw: float = 0.0
    steps: int = 0

    def update(self, batch_mean: float, decay: float) -> float:
        self.steps += 1
        self.raw = decay * self.raw + (1.0 - decay) * float(batch_mean)
        corrected = self.raw / (1.0 - decay ** self.steps) if decay > 0 else self.raw
        if not corrected > 0:
            raise NumericError("mine EMA state must stay positive")
        return corrected


@dataclass
class EstimateReport:
    value_nats: float
    value_bits: float
    joint_mean: float
    partition_term: float
    rje_a: float = math.nan
    rje_b: float = math.nan


def _report(joint_mean, partition, a=math.nan, b=math.nan) -> EstimateReport:
    value = float(joint_mean) - float(partition)
    return EstimateReport(value_nats=value, value_bits=value / LN2,
                          joint_mean=float(joint_mean), partition_term=float(partition),
                          rje_a=a, rje_b=b)


def logmeanexp(v: np.ndarray) -> float:
    """Stable log of the mean of e^v."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ShapeError("log-mean-exp of an empty view")
    m = float(np.max(v))
    return m + math.log(float(np.mean(np.exp(v - m))))


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _views(scores):
    if isinstance(scores, (ScoreMatrix, ScorePairs)):
        return scores.joint, scores.marginal
    raise ShapeError(f"expected ScoreMatrix or ScorePairs, got {type(scores).__name__}")


def _grad_like(scores, joint_grad: np.ndarray, marginal_grad: np.ndarray):
    """Assemble per-score gradients in the layout of the input scores."""
    if isinstance(scores, ScoreMatrix):
        K = scores.K
        out = np.zeros((K, K))
        out[np.eye(K, dtype=bool)] = joint_grad
        out[~np.eye(K, dtype=bool)] = marginal_grad
        return out
    return ScorePairs(joint=joint_grad, marginal=marginal_grad)


def grad_to_flat(grad) -> np.ndarray:
    """Flatten a score gradient to match the critic's flat output layout."""
    if isinstance(grad, np.ndarray):
        return grad.reshape(-1, 1)
    return np.concatenate([grad.joint, grad.marginal]).reshape(-1, 1)


# --- mine -----------------------------------------------------------------

def mine_estimate(scores) -> EstimateReport:
    joint, marginal = _views(scores)
    return _report(np.mean(joint), logmeanexp(marginal))


def mine_gradient(scores, ema_state: MineEmaState = None, ema_decay: float = 0.0):
    """Score gradients of the mine objective.

    The marginal part divides by an exponential moving average of the batch
    partition term instead of the raw batch mean; with decay 0 (or no state)
    this reduces to the exact gradient of the batch estimate.
    """
    joint, marginal = _views(scores)
    batch_mean_log = logmeanexp(marginal)
    if ema_state is None:
        ema = math.exp(batch_mean_log)
    else:
        ema = ema_state.update(math.exp(batch_mean_log), ema_decay)
    jg = np.full(joint.size, 1.0 / joint.size)
    mg = -np.exp(marginal - (math.log(ema) + math.log(marginal.size)))
    return _grad_like(scores, jg, mg)


# --- nwj ------------------------------------------------------------------

def nwj_estimate(scores) -> EstimateReport:
    joint, marginal = _views(scores)
    return _report(np.mean(joint), math.exp(logmeanexp(marginal) - 1.0))


def nwj_gradient(scores):
    joint, marginal = _views(scores)
    jg = np.full(joint.size, 1.0 / joint.size)
    mg = -np.exp(marginal - 1.0) / marginal.size
    return _grad_like(scores, jg, mg)


# --- nce ------------------------------------------------------------------

def _require_matrix(scores, kind):
    if not isinstance(scores, ScoreMatrix):
        raise ConfigError(f"{kind} needs the all-pairs score matrix")
    return scores


def nce_estimate(scores) -> EstimateReport:
    """Softmax contrastive bound; never exceeds log K."""
    s = _require_matrix(scores, "nce").values
    K = s.shape[0]
    row_max = s.max(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(np.exp(s - row_max).sum(axis=1))
    # value = mean_i [s_ii - lse_i] + log K
    return _report(np.mean(np.diagonal(s)), float(np.mean(lse)) - math.log(K))


def nce_gradient(scores):
    s = _require_matrix(scores, "nce").values
    K = s.shape[0]
    row_max = s.max(axis=1, keepdims=True)
    e = np.exp(s - row_max)
    softmax = e / e.sum(axis=1, keepdims=True)
    return (np.eye(K) - softmax) / K


# --- smile ----------------------------------------------------------------

def smile_estimate(scores, tau: float) -> EstimateReport:
    """mine with e^f clipped to [e^-tau, e^tau] inside the partition term."""
    if not tau > 0:
        raise ConfigError(f"smile tau must be > 0, got {tau}")
    joint, marginal = _views(scores)
    return _report(np.mean(joint), logmeanexp(np.clip(marginal, -tau, tau)))


def smile_gradient(scores, tau: float):
    joint, marginal = _views(scores)
    log_partition = logmeanexp(np.clip(marginal, -tau, tau))
    jg = np.full(joint.size, 1.0 / joint.size)
    inside = (marginal >= -tau) & (marginal <= tau)  # clip gradient 0 when active
    mg = np.zeros(marginal.size)
    mg[inside] = -np.exp(marginal[inside]
                         - (log_partition + math.log(marginal.size)))
    return _grad_like(scores, jg, mg)


def clipped_partition_mean(marginal_scores: np.ndarray, tau: float) -> float:
    """Mean of clip(e^f, e^-tau, e^tau) over marginal scores."""
    return math.exp(logmeanexp(np.clip(np.asarray(marginal_scores), -tau, tau)))


# --- rje ------------------------------------------------------------------

def rje_inner_bound(x: np.ndarray, a: float, b: float) -> float:
    """Reverse-Jensen upper bound on log(mean(x)) for nonnegative samples.

    bound = a * mean(log(1 + a x)) / (1 - sqrt(b/a)) - log(a), valid for
    a > b >= 1 when b is at least mean(x^2)/mean(x)^2.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ShapeError("empty sample set")
    if np.any(x < 0):
        raise DomainError("samples must be nonnegative")
    if not b >= 1.0:
        raise DomainError(f"b must be >= 1, got {b}")
    if not a > b:
        raise DomainError(f"need a > b, got a={a}, b={b}")
    denom = 1.0 - math.sqrt(b / a)
    return a * float(np.mean(np.log1p(a * x))) / denom - math.log(a)


def golden_section_a(x: np.ndarray, b: float, a_max: float,
                     rel_tol: float = 1e-6) -> float:
    """Minimize the reverse-Jensen bound over a in (b, a_max] by golden section."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if not a_max > b:
        raise DomainError(f"a_max must exceed b, got a_max={a_max}, b={b}")
    lo = b * (1.0 + 1e-6)
    hi = float(a_max)
    if not hi > lo:
        raise DomainError("bracket collapsed: a_max too close to b")

    def g(a):
        val = a * float(np.mean(np.log1p(a * x))) / (1.0 - math.sqrt(b / a)) \
            - math.log(a)
        if not math.isfinite(val):
            raise NumericError(f"non-finite bound at a={a}")
        return val

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - inv_phi * (hi - lo)
    d = lo + inv_phi * (hi - lo)
    gc, gd = g(c), g(d)
    while (hi - lo) > rel_tol * 0.5 * (abs(hi) + abs(lo)):
        if gc < gd:
            hi, d, gd = d, c, gc
            c = hi - inv_phi * (hi - lo)
            gc = g(c)
        else:
            lo, c, gc = c, d, gd
            d = lo + inv_phi * (hi - lo)
            gd = g(d)
    a = 0.5 * (lo + hi)
    if not a > b:
        a = b * (1.0 + 1e-6)
    g(a)  # surface numeric trouble at the returned point
    return a


def rje_moment_ratio(marginal_scores: np.ndarray) -> float:
    """mean(e^2f) / mean(e^f)^2 computed in shifted log space."""
    s = np.asarray(marginal_scores, dtype=np.float64).reshape(-1)
    return math.exp(logmeanexp(2.0 * s) - 2.0 * logmeanexp(s))


def rje_select_ab(marginal_scores: np.ndarray, spec: EstimatorSpec):
    """Pick (a, b) for the reverse-Jensen bound from marginal scores."""
    if spec.fixed_b > 0:
        b = spec.fixed_b
    else:
        b = max(spec.b_floor, rje_moment_ratio(marginal_scores))
    if spec.a_strategy == "fixed_multiple":
        a = spec.a_multiple * b
    else:
        a = golden_section_a(np.exp(marginal_scores), b, spec.a_max)
    if not a > b:
        raise DomainError(f"a_strategy produced a={a} <= b={b}")
    return a, b


def rje_value_given_ab(scores, a: float, b: float) -> EstimateReport:
    """Reverse-Jensen estimate with (a, b) held fixed (the training objective)."""
    joint, marginal = _views(scores)
    partition = rje_inner_bound(np.exp(marginal), a, b)
    return _report(np.mean(joint), partition, a=a, b=b)


def rje_estimate(scores, spec: EstimatorSpec) -> EstimateReport:
    joint, marginal = _views(scores)
    a, b = rje_select_ab(marginal, spec)
    return rje_value_given_ab(scores, a, b)


def rje_gradient(scores, spec: EstimatorSpec, a: float = None, b: float = None):
    """Score gradients with a and b treated as constants."""
    joint, marginal = _views(scores)
    if a is None or b is None:
        a, b = rje_select_ab(marginal, spec)
    jg = np.full(joint.size, 1.0 / joint.size)
    denom = 1.0 - math.sqrt(b / a)
    # d/ds of a*log(1+a e^s) is a^2 e^s / (1 + a e^s) = a * sigmoid(s + log a)
    mg = -(a / (marginal.size * denom)) * _sigmoid(marginal + math.log(a))
    return _grad_like(scores, jg, mg)


# --- dispatch ---------------------------------------------------------------

def estimate(scores, spec: EstimatorSpec, state: MineEmaState = None) -> EstimateReport:
    """Evaluate the configured estimator on one score batch."""
    if spec.kind == "mine":
        return mine_estimate(scores)
    if spec.kind == "nwj":
        return nwj_estimate(scores)
    if spec.kind == "nce":
        return nce_estimate(scores)
    if spec.kind == "smile":
        return smile_estimate(scores, spec.tau)
    return rje_estimate(scores, spec)


def estimate_with_gradient(scores, spec: EstimatorSpec, state: MineEmaState = None):
    """(report, score-gradient) for one batch; mine updates the EMA state."""
    if spec.kind == "mine":
        return mine_estimate(scores), mine_gradient(scores, state, spec.ema_decay)
    if spec.kind == "nwj":
        return nwj_estimate(scores), nwj_gradient(scores)
    if spec.kind == "nce":
        return nce_estimate(scores), nce_gradient(scores)
    if spec.kind == "smile":
        return smile_estimate(scores, spec.tau), smile_gradient(scores, spec.tau)
    joint, marginal = _views(scores)
    a, b = rje_select_ab(marginal, spec)
    return rje_value_given_ab(scores, a, b), rje_gradient(scores, spec, a, b)


# --- critic fitting ---------------------------------------------------------

CRITIC_HIDDEN = (256, 256)


def critic_for(spec: EstimatorSpec, dx: int, dy: int, rng,
               hidden=CRITIC_HIDDEN):
    """Joint critic for concatenated (x, y) rows; rje gets a bounded output."""
    dims = (dx + dy, *hidden, 1)
    if spec.kind == "rje":
        return mlp_init(dims, rng, output_activation=SCALED_TANH, tau=spec.tau)
    return mlp_init(dims, rng)


@dataclass
class FitResult:
    trace_bits: np.ndarray        # per-iteration estimate
    final_params: np.ndarray


def fit_critic(critic, source, spec: EstimatorSpec, iters: int, lr: float,
               rng, marginal_mode: str = ALL_PAIRS) -> FitResult:
    """Ascend the estimator objective on the critic for `iters` batches.

    `source(rng) -> SampleBatch` supplies fresh joint draws each iteration.
    Returns the per-iteration estimate trace in bits.
    """
    if marginal_mode not in (ALL_PAIRS, SHIFTED):
        raise ConfigError(f"unknown marginal mode {marginal_mode!r}")
    if marginal_mode == SHIFTED and spec.kind == "nce":
        raise ConfigError("nce needs all-pairs marginals")
    state = MineEmaState() if spec.kind == "mine" else None
    opt = NadamState(critic.n_params)
    params = params_to_vector(critic)
    trace = np.empty(iters)
    for step in range(iters):
        try:
            batch = source(rng)
            if marginal_mode == ALL_PAIRS:
                inputs = critic_inputs(batch)
                out, cache = mlp_forward(critic, inputs)
                scores = split_scores(out[:, 0], batch.K)
            else:
                inputs = critic_inputs_shifted(batch)
                out, cache = mlp_forward(critic, inputs)
                scores = split_scores_shifted(out[:, 0], batch.K)
            report, grad = estimate_with_gradient(scores, spec, state)
            pgrads, _ = mlp_backward(critic, cache, grad_to_flat(grad))
            params = nadam_step(opt, params, -grads_to_vector(pgrads), lr)
            vector_to_params(critic, params)
        except NumericError as exc:
            raise NumericError(f"critic training failed at step {step}: {exc}") from exc
        trace[step] = report.value_bits
    return FitResult(trace_bits=trace, final_params=params)


@dataclass
class RerunStats:
    """Per-step statistics of the estimate across independent reruns."""

    mean_bits: np.ndarray
    var_bits: np.ndarray   # unbiased across-seed variance
    traces: np.ndarray     # (n_seeds, iters)


def rerun_statistics(spec: EstimatorSpec, make_critic, make_source, seeds,
                     iters: int, lr: float,
                     marginal_mode: str = ALL_PAIRS) -> RerunStats:
    """Fit one critic per seed and aggregate the estimate traces.

    `make_critic(seed) -> Mlp` and `make_source(seed) -> source` must build
    fully independent state per seed.
    """
    seeds = list(seeds)
    if len(seeds) < 5:
        raise ConfigError(f"need at least 5 seeds, got {len(seeds)}")
    traces = []
    for seed in seeds:
        from .rng import STREAM_DATA, make_rng
        critic = make_critic(seed)
        res = fit_critic(critic, make_source(seed), spec, iters, lr,
                         make_rng(seed, STREAM_DATA), marginal_mode)
        traces.append(res.trace_bits)
    traces = np.stack(traces)
    return RerunStats(mean_bits=traces.mean(axis=0),
                      var_bits=traces.var(axis=0, ddof=1),
                      traces=traces)
