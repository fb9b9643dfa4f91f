"""Channel-coding autoencoder: encoder, critic and decoder over an AWGN link.

The system sends one of M messages over n real channel uses.  Training
alternates three phases:

  1. critic pretraining -- maximize the chosen MI estimator with the
     encoder frozen;
  2. alternating encoder ascent -- maximize the same objective in the
     encoder weights with the critic frozen, re-tuning the critic briefly
     after each epoch (gradients reach the encoder through both the x rows
     of the score matrix and, via the additive-noise reparameterization
     y = x + z, the y rows);
  3. decoder training -- minimize categorical cross-entropy on noisy
     receptions with everything else frozen.

Codewords are power-normalized over the whole batch (one scalar scale), so
the unit-average-power constraint holds exactly and its gradient couples
every codeword in the batch.  Block error rate is then measured on the
frozen constellation by plain Monte Carlo.
"""

import math
from dataclasses import dataclass

import numpy as np

from .channels import ebno_db_to_noise_var, power_scale
from .errors import ConfigError, NumericError, ShapeError
from .estimators import EstimatorSpec, MineEmaState, critic_for, \
    estimate_with_gradient, grad_to_flat
from .nn import Mlp, grads_to_vector, mlp_backward, mlp_forward, mlp_init, \
    params_to_vector, vector_to_params
from .optim import NadamState, nadam_step
from .rng import STREAM_BATCH, STREAM_INIT, STREAM_NOISE, make_rng
from .sampling import SampleBatch, critic_inputs, split_scores

HIDDEN = (256, 256)


@dataclass(frozen=True)
class MessageSet:
    """M messages carried by n real channel uses."""

    n_messages: int = 16
    block_dim: int = 2

    def __post_init__(self):
        m = self.n_messages
        if m < 2 or (m & (m - 1)) != 0:
            raise ConfigError(f"message count must be a power of two, got {m}")
        if self.block_dim < 1:
            raise ConfigError(f"block length must be positive, got {self.block_dim}")

    @property
    def rate(self) -> float:
        """Bits per real channel dimension."""
        return math.log2(self.n_messages) / self.block_dim

    def one_hot(self, messages: np.ndarray) -> np.ndarray:
        messages = np.asarray(messages)
        if messages.ndim != 1:
            raise ShapeError("messages must be a 1-d integer array")
        if np.any(messages < 0) or np.any(messages >= self.n_messages):
            raise ConfigError("message index out of range")
        return np.eye(self.n_messages)[messages]


@dataclass
class TrainingSchedule:
    critic_pretrain_iters: int = 500
    encoder_epochs: int = 5
    encoder_iters_per_epoch: int = 400
    critic_tune_iters_per_epoch: int = 1
    decoder_epochs: int = 5
    decoder_iters_per_epoch: int = 400
    batch_size: int = 64
    lr: float = 0.005
    ebno_db: float = 7.0

    def __post_init__(self):
        for name in ("critic_pretrain_iters", "encoder_epochs",
                     "encoder_iters_per_epoch", "critic_tune_iters_per_epoch",
                     "decoder_epochs", "decoder_iters_per_epoch", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.lr >= 0:
            raise ConfigError(f"lr must be nonnegative, got {self.lr}")


def noise_var_for(message_set: MessageSet, ebno_db: float) -> float:
    return ebno_db_to_noise_var(ebno_db, message_set.rate)


def make_encoder(message_set: MessageSet, rng, hidden=HIDDEN) -> Mlp:
    return mlp_init((message_set.n_messages, *hidden, message_set.block_dim), rng)


def make_decoder(message_set: MessageSet, rng, hidden=HIDDEN) -> Mlp:
    return mlp_init((message_set.block_dim, *hidden, message_set.n_messages), rng)


def make_critic(message_set: MessageSet, spec: EstimatorSpec, rng,
                hidden=HIDDEN) -> Mlp:
    return critic_for(spec, message_set.block_dim, message_set.block_dim, rng, hidden)


def draw_messages(message_set: MessageSet, count: int, rng) -> np.ndarray:
    return rng.integers(0, message_set.n_messages, size=count)


def encode_batch(encoder: Mlp, messages: np.ndarray, message_set: MessageSet,
                 per_codeword: bool = False) -> np.ndarray:
    """Map messages to power-normalized codewords.

    The default normalizes the batch with a single scalar (unit average
    power across batch and dimensions); `per_codeword` instead scales each
    codeword to unit mean square on its own.
    """
    raw, _ = mlp_forward(encoder, message_set.one_hot(messages))
    if per_codeword:
        norms = np.sqrt(np.mean(raw ** 2, axis=1, keepdims=True))
        if np.any(norms == 0):
            raise NumericError("cannot normalize an all-zero codeword")
        return raw / norms
    return power_scale(raw) * raw


POWER_TOL = 1e-9


def _forward_encode(encoder: Mlp, onehot: np.ndarray):
    """Encoder forward pass keeping what the backward pass needs."""
    raw, cache = mlp_forward(encoder, onehot)
    scale = power_scale(raw)
    x = scale * raw
    dev = abs(float(np.mean(x ** 2)) - 1.0)
    if dev > POWER_TOL:
        raise NumericError(f"power normalization violated: |mean power - 1| = {dev:.3e}")
    return x, raw, scale, cache, dev


def _power_norm_backward(grad_x: np.ndarray, raw: np.ndarray,
                         scale: float) -> np.ndarray:
    """Backprop through x = scale(raw) * raw with scale = 1/sqrt(mean(raw^2))."""
    n = raw.size
    inner = float(np.sum(grad_x * raw))
    return scale * grad_x - (scale ** 3 / n) * inner * raw


def _score_batch(critic: Mlp, x: np.ndarray, y: np.ndarray):
    batch = SampleBatch(x=x, y=y)
    inputs = critic_inputs(batch)
    out, cache = mlp_forward(critic, inputs)
    return split_scores(out[:, 0], batch.K), cache


@dataclass
class CriticPhase:
    trace_bits: np.ndarray
    opt: NadamState
    mine_state: MineEmaState


def train_critic(critic: Mlp, encoder: Mlp, message_set: MessageSet,
                 noise_var: float, spec: EstimatorSpec, iters: int,
                 batch_size: int, lr: float, rng_batch, rng_noise, *,
                 mine_state: MineEmaState = None,
                 opt: NadamState = None) -> CriticPhase:
    """Ascend the estimator objective in the critic with the encoder frozen."""
    if mine_state is None and spec.kind == "mine":
        mine_state = MineEmaState()
    if opt is None:
        opt = NadamState(critic.n_params)
    params = params_to_vector(critic)
    sigma = math.sqrt(noise_var)
    trace = np.empty(iters)
    for step in range(iters):
        try:
            msgs = draw_messages(message_set, batch_size, rng_batch)
            x = encode_batch(encoder, msgs, message_set)
            y = x + sigma * rng_noise.standard_normal(x.shape)
            scores, cache = _score_batch(critic, x, y)
            report, grad = estimate_with_gradient(scores, spec, mine_state)
            pgrads, _ = mlp_backward(critic, cache, grad_to_flat(grad))
            params = nadam_step(opt, params, -grads_to_vector(pgrads), lr)
            vector_to_params(critic, params)
        except NumericError as exc:
            raise NumericError(f"critic pretraining failed at step {step}: {exc}") from exc
        trace[step] = report.value_bits
    return CriticPhase(trace_bits=trace, opt=opt, mine_state=mine_state)


@dataclass
class EncoderPhase:
    trace_bits: np.ndarray
    max_power_dev: float


def train_encoder_alternating(encoder: Mlp, critic: Mlp,
                              message_set: MessageSet, noise_var: float,
                              spec: EstimatorSpec, schedule: TrainingSchedule,
                              rng_batch, rng_noise, *,
                              mine_state: MineEmaState = None,
                              critic_opt: NadamState = None) -> EncoderPhase:
    """Alternate encoder ascent epochs with brief critic re-tuning.

    Per epoch: `encoder_iters_per_epoch` NADAM steps on the encoder with the
    critic frozen, then `critic_tune_iters_per_epoch` steps on the critic
    with the encoder frozen.  The encoder gradient is assembled from both
    halves of every critic input row and pushed back through the batch power
    normalization.
    """
    if mine_state is None and spec.kind == "mine":
        mine_state = MineEmaState()
    if critic_opt is None:
        critic_opt = NadamState(critic.n_params)
    enc_opt = NadamState(encoder.n_params)
    enc_params = params_to_vector(encoder)
    K = schedule.batch_size
    dim = message_set.block_dim
    sigma = math.sqrt(noise_var)
    trace = []
    max_dev = 0.0
    for epoch in range(schedule.encoder_epochs):
        for step in range(schedule.encoder_iters_per_epoch):
            try:
                msgs = draw_messages(message_set, K, rng_batch)
                onehot = message_set.one_hot(msgs)
                x, raw, scale, enc_cache, dev = _forward_encode(encoder, onehot)
                max_dev = max(max_dev, dev)
                y = x + sigma * rng_noise.standard_normal(x.shape)
                scores, crit_cache = _score_batch(critic, x, y)
                report, grad = estimate_with_gradient(scores, spec, mine_state)
                _, in_grads = mlp_backward(critic, crit_cache, grad_to_flat(grad))
                # Row i*K + j of the critic input is [x_i | y_j]; fold both
                # halves back onto the batch, with dV/dy = dV/dx since y = x + z.
                gx = in_grads[:, :dim].reshape(K, K, dim).sum(axis=1)
                gy = in_grads[:, dim:].reshape(K, K, dim).sum(axis=0)
                grad_raw = _power_norm_backward(gx + gy, raw, scale)
                pgrads, _ = mlp_backward(encoder, enc_cache, grad_raw)
                enc_params = nadam_step(enc_opt, enc_params,
                                        -grads_to_vector(pgrads), schedule.lr)
                vector_to_params(encoder, enc_params)
            except NumericError as exc:
                raise NumericError(
                    f"encoder ascent failed at epoch {epoch} step {step}: {exc}"
                ) from exc
            trace.append(report.value_bits)
        tune = train_critic(critic, encoder, message_set, noise_var, spec,
                            schedule.critic_tune_iters_per_epoch, K, schedule.lr,
                            rng_batch, rng_noise,
                            mine_state=mine_state, opt=critic_opt)
        trace.extend(tune.trace_bits)
    return EncoderPhase(trace_bits=np.asarray(trace), max_power_dev=max_dev)


def cross_entropy_and_grad(logits: np.ndarray, labels: np.ndarray):
    """Mean categorical cross-entropy and its gradient w.r.t. the logits."""
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"logits {logits.shape} do not match labels {labels.shape}")
    k = logits.shape[0]
    row_max = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - row_max)
    lse = row_max[:, 0] + np.log(e.sum(axis=1))
    loss = float(np.mean(lse - logits[np.arange(k), labels]))
    grad = e / e.sum(axis=1, keepdims=True)
    grad[np.arange(k), labels] -= 1.0
    return loss, grad / k


def train_decoder(decoder: Mlp, encoder: Mlp, message_set: MessageSet,
                  noise_var: float, schedule: TrainingSchedule,
                  rng_batch, rng_noise, *, shuffle_labels: bool = False) -> np.ndarray:
    """Minimize cross-entropy on noisy receptions; encoder frozen.

    `shuffle_labels` permutes the targets within each batch -- a leakage
    diagnostic that must keep the loss at chance level.
    """
    opt = NadamState(decoder.n_params)
    params = params_to_vector(decoder)
    sigma = math.sqrt(noise_var)
    # train against the same frozen codeword table the deployed system sends,
    # not per-batch renormalized codewords whose scale jitters with the draw
    table = export_constellation(encoder, message_set)
    iters = schedule.decoder_epochs * schedule.decoder_iters_per_epoch
    trace = np.empty(iters)
    for step in range(iters):
        msgs = draw_messages(message_set, schedule.batch_size, rng_batch)
        y = table[msgs] + sigma * rng_noise.standard_normal((msgs.size,
                                                             table.shape[1]))
        labels = rng_batch.permutation(msgs) if shuffle_labels else msgs
        logits, cache = mlp_forward(decoder, y)
        loss, dlogits = cross_entropy_and_grad(logits, labels)
        pgrads, _ = mlp_backward(decoder, cache, dlogits)
        params = nadam_step(opt, params, grads_to_vector(pgrads), schedule.lr)
        vector_to_params(decoder, params)
        trace[step] = loss
    return trace


def export_constellation(encoder: Mlp, message_set: MessageSet) -> np.ndarray:
    """All M codewords, message order, normalized under uniform weighting."""
    return encode_batch(encoder, np.arange(message_set.n_messages), message_set)


def min_pairwise_distance(points: np.ndarray) -> float:
    points = np.asarray(points)
    if points.shape[0] < 2:
        raise ShapeError("need at least two points")
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.sum(diff ** 2, axis=2))
    return float(np.min(dist[~np.eye(points.shape[0], dtype=bool)]))


@dataclass
class BlerReport:
    bler: float
    errors: int
    trials: int
    per_message_errors: np.ndarray
    per_message_trials: np.ndarray


def evaluate_bler(encoder: Mlp, decoder: Mlp, message_set: MessageSet,
                  ebno_db: float, trials: int, rng,
                  chunk_size: int = 8192) -> BlerReport:
    """Monte-Carlo block error rate on the frozen constellation.

    Messages are uniform; the transmit table is the normalized constellation
    (the deployed system sends fixed codewords, so per-chunk renormalization
    would be wrong here).  `ebno_db = inf` gives the noiseless channel.
    """
    if trials < 1:
        raise ConfigError(f"trials must be positive, got {trials}")
    table = export_constellation(encoder, message_set)
    m = message_set.n_messages
    sigma = math.sqrt(noise_var_for(message_set, ebno_db))
    errors = 0
    per_err = np.zeros(m, dtype=np.int64)
    per_cnt = np.zeros(m, dtype=np.int64)
    done = 0
    while done < trials:
        k = min(chunk_size, trials - done)
        msgs = draw_messages(message_set, k, rng)
        y = table[msgs]
        if sigma > 0:
            y = y + sigma * rng.standard_normal(y.shape)
        logits, _ = mlp_forward(decoder, y)
        decoded = np.argmax(logits, axis=1)
        wrong = decoded != msgs
        errors += int(np.sum(wrong))
        np.add.at(per_err, msgs[wrong], 1)
        np.add.at(per_cnt, msgs, 1)
        done += k
    return BlerReport(bler=errors / trials, errors=errors, trials=trials,
                      per_message_errors=per_err, per_message_trials=per_cnt)


@dataclass
class TrainedSystem:
    """Everything produced by one full training run."""

    message_set: MessageSet
    spec: EstimatorSpec
    schedule: TrainingSchedule
    seed: int
    encoder: Mlp
    critic: Mlp
    decoder: Mlp
    pretrain_trace_bits: np.ndarray
    encoder_trace_bits: np.ndarray
    decoder_trace_nats: np.ndarray
    init_min_distance: float
    trained_min_distance: float
    max_power_dev: float


def run_autoencoder_training(message_set: MessageSet, spec: EstimatorSpec,
                             schedule: TrainingSchedule, seed: int) -> TrainedSystem:
    """Execute pretrain -> alternating -> decoder for one seed."""
    rng_init = make_rng(seed, STREAM_INIT)
    rng_batch = make_rng(seed, STREAM_BATCH)
    rng_noise = make_rng(seed, STREAM_NOISE)
    encoder = make_encoder(message_set, rng_init)
    critic = make_critic(message_set, spec, rng_init)
    decoder = make_decoder(message_set, rng_init)
    noise_var = noise_var_for(message_set, schedule.ebno_db)
    init_dist = min_pairwise_distance(export_constellation(encoder, message_set))
    pre = train_critic(critic, encoder, message_set, noise_var, spec,
                       schedule.critic_pretrain_iters, schedule.batch_size,
                       schedule.lr, rng_batch, rng_noise)
    alt = train_encoder_alternating(encoder, critic, message_set, noise_var,
                                    spec, schedule, rng_batch, rng_noise,
                                    mine_state=pre.mine_state,
                                    critic_opt=pre.opt)
    dec_trace = train_decoder(decoder, encoder, message_set, noise_var,
                              schedule, rng_batch, rng_noise)
    return TrainedSystem(
        message_set=message_set, spec=spec, schedule=schedule, seed=seed,
        encoder=encoder, critic=critic, decoder=decoder,
        pretrain_trace_bits=pre.trace_bits,
        encoder_trace_bits=alt.trace_bits,
        decoder_trace_nats=dec_trace,
        init_min_distance=init_dist,
        trained_min_distance=min_pairwise_distance(
            export_constellation(encoder, message_set)),
        max_power_dev=alt.max_power_dev)
