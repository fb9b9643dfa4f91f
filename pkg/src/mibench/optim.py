"""Nesterov-Adam (NADAM) optimizer on flat parameter vectors."""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError


@dataclass
class NadamState:
    """Moment accumulators for one parameter vector."""

    size: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)


def nadam_step(state: NadamState, params: np.ndarray, grads: np.ndarray,
               lr: float) -> np.ndarray:
    """One NADAM descent step; returns updated params, advances state.

    Refuses to step (state untouched) when any gradient entry is non-finite.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.size != state.size:
        raise ShapeError(
            f"params {params.shape}, grads {grads.shape}, state size {state.size}")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient entries, step refused")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1.0 - b1) * grads
    state.v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    # Nesterov lookahead: blend the bias-corrected momentum with the raw gradient.
    update = (b1 * m_hat + (1.0 - b1) * grads / (1.0 - b1 ** state.t))
    return params - lr * update / (np.sqrt(v_hat) + state.eps)
