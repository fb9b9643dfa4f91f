import math

import numpy as np
import pytest
from scipy import stats

from mibench.channels import AwgnChannel, BscChannel, awgn_true_mi_bits, \
    binary_entropy_bits, bsc_true_mi_bits, ebno_db_to_noise_var, \
    normalize_power, power_scale, sample_awgn_joint, sample_bsc_joint
from mibench.errors import ConfigError, NumericError
from mibench.rng import make_rng


def test_awgn_oracle_reference_point():
    # 8 dimensions at SNR 4 -> 4 * log2(5)
    assert abs(awgn_true_mi_bits(1.0, 0.25, 8) - 9.2877) < 1e-4
    assert abs(awgn_true_mi_bits(1.0, 0.25, 8) - 4 * math.log2(5)) < 1e-12
    assert awgn_true_mi_bits(0.0, 1.0, 8) == 0.0


def test_bsc_oracle_reference_point():
    # 1 - h2(0.11), hand-evaluated: h2 = (0.2428002405 + 0.1037150965)/ln 2
    assert bsc_true_mi_bits(0.11) == pytest.approx(0.5000840418, abs=1e-9)
    assert abs(bsc_true_mi_bits(0.11) - 0.5) < 1e-3
    assert bsc_true_mi_bits(0.5) == 0.0
    assert bsc_true_mi_bits(0.0) == 1.0


def test_binary_entropy_endpoints_and_symmetry():
    assert binary_entropy_bits(0.0) == 0.0
    assert binary_entropy_bits(1.0) == 0.0
    assert abs(binary_entropy_bits(0.5) - 1.0) < 1e-12
    for d in (0.03, 0.11, 0.4):
        assert abs(binary_entropy_bits(d) - binary_entropy_bits(1 - d)) < 1e-12


def test_ebno_conversion():
    # 7 dB at rate 2 bits/dim
    assert abs(ebno_db_to_noise_var(7.0, 2.0) - 0.049881) < 1e-5
    # 0 dB, rate 1: 1/(2*1*1) = 0.5
    assert abs(ebno_db_to_noise_var(0.0, 1.0) - 0.5) < 1e-12
    assert ebno_db_to_noise_var(math.inf, 2.0) == 0.0
    with pytest.raises(ConfigError):
        ebno_db_to_noise_var(7.0, 0.0)


def test_awgn_joint_sample_statistics():
    batch = sample_awgn_joint(2.0, 0.5, 4, 20000, make_rng(0))
    assert batch.x.shape == (20000, 4)
    assert abs(np.var(batch.x) - 2.0) < 0.05
    assert abs(np.var(batch.y - batch.x) - 0.5) < 0.02
    # noise independent of signal
    z = batch.y - batch.x
    corr = np.corrcoef(batch.x.ravel(), z.ravel())[0, 1]
    assert abs(corr) < 0.02


def test_awgn_channel_transmit_matches_noise_var():
    ch = AwgnChannel(dim=3, noise_var=0.1)
    x = np.zeros((50000, 3))
    y = ch.transmit(x, make_rng(1))
    assert abs(np.var(y) - 0.1) < 0.005


def test_bsc_flip_rate():
    batch = sample_bsc_joint(0.11, 200000, make_rng(2))
    assert set(np.unique(batch.x)) <= {0.0, 1.0}
    flips = np.mean(batch.x != batch.y)
    assert abs(flips - 0.11) < 0.005
    # x is (roughly) uniform
    assert abs(np.mean(batch.x) - 0.5) < 0.01


def test_bsc_channel_transmit():
    ch = BscChannel(flip_prob=0.3)
    x = (make_rng(3).random((100000, 1)) < 0.5).astype(float)
    y = ch.transmit(x, make_rng(4))
    assert set(np.unique(y)) <= {0.0, 1.0}
    assert abs(np.mean(x != y) - 0.3) < 0.01


def test_power_normalization_unit_and_idempotent():
    x = make_rng(5).normal(3.0, 2.0, size=(64, 2))
    z = normalize_power(x)
    assert abs(np.mean(z ** 2) - 1.0) < 1e-12
    again = normalize_power(z)
    assert np.allclose(again, z, rtol=0, atol=1e-12)
    # scale-invariance: normalizing c*x gives the same result
    assert np.allclose(normalize_power(5.0 * x), z, atol=1e-12)


def test_power_scale_all_zero_rejected():
    with pytest.raises(NumericError):
        power_scale(np.zeros((4, 2)))


def test_awgn_marginal_shuffle_indistinguishable():
    """Scores aside, shuffled y should look like independent draws."""
    rng = make_rng(6)
    batch = sample_awgn_joint(1.0, 0.25, 1, 5000, rng)
    shuffled = rng.permutation(batch.y[:, 0])
    # marginal distribution of y unchanged by shuffling (two-sample check)
    stat = stats.ks_2samp(batch.y[:, 0], shuffled)
    assert stat.pvalue > 0.01


def test_channel_param_validation():
    with pytest.raises(ConfigError):
        sample_awgn_joint(-1.0, 0.25, 4, 8, make_rng(0))
    with pytest.raises(ConfigError):
        sample_awgn_joint(1.0, 0.25, 4, 1, make_rng(0))
    with pytest.raises(ConfigError):
        sample_bsc_joint(0.7, 8, make_rng(0))
    with pytest.raises(ConfigError):
        BscChannel(flip_prob=-0.1)
