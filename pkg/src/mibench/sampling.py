"""Critic input construction and score layouts.

A batch of K joint draws yields K^2 critic evaluations: the K diagonal
pairs (x_i, y_i) are joint samples and the K(K-1) off-diagonal pairs
(x_i, y_j), i != j, are samples from the product of the marginals.  The
shifted layout, kept as an ablation, pairs x_i with y_{i+1} instead and
yields only K marginal samples.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError


@dataclass
class SampleBatch:
    """K aligned joint draws: row i of x pairs with row i of y."""

    x: np.ndarray  # (K, dx)
    y: np.ndarray  # (K, dy)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        if self.x.shape[0] != self.y.shape[0]:
            raise ShapeError(f"x has {self.x.shape[0]} rows, y has {self.y.shape[0]}")
        if self.x.shape[0] < 2:
            raise ConfigError("need K >= 2 joint draws to form marginal pairs")

    @property
    def K(self) -> int:
        return self.x.shape[0]


@dataclass
class ScoreMatrix:
    """K x K critic scores: entry (i, j) scores the pair (x_i, y_j)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ShapeError(f"score matrix must be square, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NumericError("non-finite critic scores")

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def joint(self) -> np.ndarray:
        """The K diagonal (joint) scores."""
        return np.diagonal(self.values).copy()

    @property
    def marginal(self) -> np.ndarray:
        """The K(K-1) off-diagonal scores in row-major order, diagonal skipped."""
        mask = ~np.eye(self.K, dtype=bool)
        return self.values[mask]

    def flat(self) -> np.ndarray:
        """Row-major flattening; inverse of split_scores."""
        return self.values.reshape(-1).copy()


@dataclass
class ScorePairs:
    """Shifted-marginal ablation layout: K joint and K marginal scores."""

    joint: np.ndarray
    marginal: np.ndarray

    def __post_init__(self):
        self.joint = np.asarray(self.joint, dtype=np.float64).reshape(-1)
        self.marginal = np.asarray(self.marginal, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(self.joint)) and np.all(np.isfinite(self.marginal))):
            raise NumericError("non-finite critic scores")


def critic_inputs(batch: SampleBatch) -> np.ndarray:
    """All K^2 concatenated pairs; row i*K + j is [x_i || y_j]."""
    K = batch.K
    x_rep = np.repeat(batch.x, K, axis=0)
    y_til = np.tile(batch.y, (K, 1))
    return np.concatenate([x_rep, y_til], axis=1)


def critic_inputs_shifted(batch: SampleBatch) -> np.ndarray:
    """2K concatenated pairs: K joint rows then K rows pairing x_i with y_{i+1}."""
    y_shift = np.roll(batch.y, -1, axis=0)
    joint = np.concatenate([batch.x, batch.y], axis=1)
    marg = np.concatenate([batch.x, y_shift], axis=1)
    return np.concatenate([joint, marg], axis=0)


def split_scores(flat_scores: np.ndarray, K: int) -> ScoreMatrix:
    """Reshape K^2 flat critic outputs (row-major) into a ScoreMatrix."""
    flat = np.asarray(flat_scores, dtype=np.float64).reshape(-1)
    if flat.size != K * K:
        raise ShapeError(f"expected {K * K} scores, got {flat.size}")
    return ScoreMatrix(values=flat.reshape(K, K).copy())


def split_scores_shifted(flat_scores: np.ndarray, K: int) -> ScorePairs:
    """Split 2K flat scores from critic_inputs_shifted into joint/marginal views."""
    flat = np.asarray(flat_scores, dtype=np.float64).reshape(-1)
    if flat.size != 2 * K:
        raise ShapeError(f"expected {2 * K} scores, got {flat.size}")
    return ScorePairs(joint=flat[:K].copy(), marginal=flat[K:].copy())
