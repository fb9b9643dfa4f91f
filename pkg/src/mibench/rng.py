"""Deterministic random number streams.

All randomness flows through counter-based Philox generators keyed by an
explicit 64-bit seed, so identical seeds reproduce identical sample streams
on any platform.  Independent sub-streams keep weight initialization,
channel noise, batch draws, and evaluation noise from perturbing each other
when one of them changes.
"""

import numpy as np

from .errors import ConfigError

# Sub-stream indices. Each is a disjoint 2^128 block of the Philox sequence.
STREAM_INIT = 0
STREAM_NOISE = 1
STREAM_BATCH = 2
STREAM_EVAL = 3
STREAM_DATA = 4


def make_rng(seed: int, stream: int = STREAM_INIT) -> np.random.Generator:
    """Generator for the given seed and sub-stream."""
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    if not isinstance(stream, (int, np.integer)) or stream < 0:
        raise ConfigError(f"stream must be a nonnegative integer, got {stream!r}")
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)).jumped(stream))
