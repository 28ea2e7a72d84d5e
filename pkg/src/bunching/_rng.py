"""Reproducible random streams keyed by ``(seed, stream)``."""

from __future__ import annotations

import numpy as np

# Stream ids used across the package; keep them stable so that a given seed
# always reproduces the same samples.
STREAM_ABILITY = 0
STREAM_COVARIATE = 1
STREAM_FRICTION = 2
STREAM_COMPONENT = 3


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based Philox generator for a (seed, stream) pair.

    Different streams of the same seed are statistically independent, so
    draws for one model block never shift when another block changes size.
    """
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be nonnegative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))
