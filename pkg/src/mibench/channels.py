"""Channel simulators with closed-form mutual-information oracles.

Both channels operate on real-valued signals: the additive white Gaussian
noise channel over d real dimensions and the binary symmetric channel with
bits embedded as the reals {0.0, 1.0}.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .sampling import SampleBatch

LN2 = np.log(2.0)


@dataclass
class AwgnChannel:
    """y = x + z with z ~ N(0, I * noise_var), per real dimension."""

    dim: int
    noise_var: float

    def __post_init__(self):
        if self.dim <= 0:
            raise ConfigError(f"dim must be positive, got {self.dim}")
        if not self.noise_var > 0:
            raise ConfigError(f"noise_var must be > 0, got {self.noise_var}")

    def sample_noise(self, rows: int, rng) -> np.ndarray:
        return rng.normal(0.0, np.sqrt(self.noise_var), size=(rows, self.dim))

    def transmit(self, x: np.ndarray, rng) -> np.ndarray:
        return x + self.sample_noise(x.shape[0], rng)


@dataclass
class BscChannel:
    """y = x XOR z with z ~ Bern(flip_prob), x and y carried as {0.0, 1.0}."""

    flip_prob: float

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 0.5:
            raise ConfigError(f"flip_prob must lie in [0, 0.5], got {self.flip_prob}")

    def transmit(self, x: np.ndarray, rng) -> np.ndarray:
        flips = rng.random(x.shape) < self.flip_prob
        return np.abs(x - flips.astype(np.float64))


def sample_awgn_joint(sigma_x2: float, sigma_z2: float, d: int, K: int,
                      rng) -> SampleBatch:
    """K i.i.d. pairs with x ~ N(0, I*sigma_x2) and y = x + z."""
    if not (sigma_x2 > 0 and sigma_z2 > 0):
        raise ConfigError("sigma_x2 and sigma_z2 must be > 0")
    if K < 2:
        raise ConfigError("K >= 2 required for marginal pairing")
    x = rng.normal(0.0, np.sqrt(sigma_x2), size=(K, d))
    z = rng.normal(0.0, np.sqrt(sigma_z2), size=(K, d))
    return SampleBatch(x=x, y=x + z)


def sample_bsc_joint(delta: float, K: int, rng) -> SampleBatch:
    """K pairs with x uniform on {0,1} and y = x XOR Bern(delta)."""
    if not 0.0 <= delta <= 0.5:
        raise ConfigError(f"delta must lie in [0, 0.5], got {delta}")
    if K < 2:
        raise ConfigError("K >= 2 required for marginal pairing")
    x = (rng.random((K, 1)) < 0.5).astype(np.float64)
    flips = (rng.random((K, 1)) < delta).astype(np.float64)
    return SampleBatch(x=x, y=np.abs(x - flips))


def awgn_true_mi_bits(sigma_x2: float, sigma_z2: float, d: int) -> float:
    """(d/2) * log2(1 + sigma_x2 / sigma_z2)."""
    if not (sigma_x2 >= 0 and sigma_z2 > 0):
        raise ConfigError("need sigma_x2 >= 0 and sigma_z2 > 0")
    return 0.5 * d * np.log2(1.0 + sigma_x2 / sigma_z2)


def binary_entropy_bits(delta: float) -> float:
    if delta in (0.0, 1.0):
        return 0.0
    return float(-delta * np.log2(delta) - (1.0 - delta) * np.log2(1.0 - delta))


def bsc_true_mi_bits(delta: float) -> float:
    """1 - h_b(delta) for the binary symmetric channel with uniform input."""
    if not 0.0 <= delta <= 0.5:
        raise ConfigError(f"delta must lie in [0, 0.5], got {delta}")
    return 1.0 - binary_entropy_bits(delta)


def power_scale(x: np.ndarray) -> float:
    """Scalar s such that s*x has unit mean square over all entries."""
    x = np.asarray(x, dtype=np.float64)
    mean_sq = float(np.mean(x * x))
    if mean_sq <= 0.0 or not np.isfinite(mean_sq):
        raise NumericError("cannot normalize an all-zero or non-finite batch")
    return 1.0 / np.sqrt(mean_sq)


def normalize_power(x: np.ndarray) -> np.ndarray:
    """Scale the whole batch so the mean of x^2 over dimensions and batch is 1."""
    return np.asarray(x, dtype=np.float64) * power_scale(x)


def ebno_db_to_noise_var(ebno_db: float, bits_per_dim: float) -> float:
    """Noise variance per real dimension at the given Eb/N0.

    Assumes unit average power per real dimension, so the energy per bit is
    1/R and the per-dimension noise variance is N0/2 = 1 / (2 R 10^(dB/10)).
    """
    if not bits_per_dim > 0:
        raise ConfigError(f"bits_per_dim must be > 0, got {bits_per_dim}")
    return 1.0 / (2.0 * bits_per_dim * 10.0 ** (ebno_db / 10.0))
