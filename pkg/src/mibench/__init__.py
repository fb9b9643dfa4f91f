"""Neural mutual-information estimation benchmark for channel coding.

Five variational MI estimators (mine, nwj, nce, smile, rje) trained over a
small joint critic, AWGN/BSC channel simulators with closed-form MI
oracles, a channel-coding autoencoder trained by alternating MI
maximization, and a CLI harness that reproduces the estimator-comparison
and autoencoder experiments as CSV artifacts.
"""

from .channels import AwgnChannel, BscChannel, awgn_true_mi_bits, \
    binary_entropy_bits, bsc_true_mi_bits, ebno_db_to_noise_var, \
    normalize_power, power_scale, sample_awgn_joint, sample_bsc_joint
from .coding import BlerReport, MessageSet, TrainingSchedule, cross_entropy_and_grad, \
    encode_batch, evaluate_bler, export_constellation, make_critic, make_decoder, \
    make_encoder, min_pairwise_distance, run_autoencoder_training, train_critic, \
    train_decoder, train_encoder_alternating
from .config import ExperimentConfig, default_config, parse_config, \
    parse_config_text, render_config
from .errors import ConfigError, DomainError, MibenchError, NumericError, ShapeError
from .estimators import EstimateReport, EstimatorSpec, KINDS, MineEmaState, \
    estimate, estimate_with_gradient, fit_critic, golden_section_a, logmeanexp, \
    mine_estimate, mine_gradient, nce_estimate, nce_gradient, nwj_estimate, \
    nwj_gradient, rerun_statistics, rje_estimate, rje_gradient, rje_inner_bound, \
    smile_estimate, smile_gradient
from .harness import LemmaReport, RunRecord, run_awgn_estimators, \
    run_bsc_estimators, run_autoencoder, run_experiment, run_lemma_check, \
    summarize_bias_variance, write_outputs
from .nn import Mlp, gradient_check, mlp_backward, mlp_forward, mlp_init
from .optim import NadamState, nadam_step
from .rng import STREAM_BATCH, STREAM_DATA, STREAM_EVAL, STREAM_INIT, \
    STREAM_NOISE, make_rng
from .sampling import SampleBatch, ScoreMatrix, ScorePairs, critic_inputs, \
    critic_inputs_shifted, split_scores, split_scores_shifted

__version__ = "0.1.0"
