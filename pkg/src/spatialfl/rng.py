"""Keyed random streams.

Every random decision in a simulation draws from a stream derived from the
experiment seed plus a short tuple of integer keys (purpose tag, round,
client index...). Streams with different keys are statistically independent
and any one of them can be rebuilt without replaying the others, which is
what makes resumed runs continue identically.
"""
import numpy as np

# purpose tags
UES = 1
POINTS = 2
LABELS = 3
BINDING = 4
INIT = 5
CLUSTERING = 6
SELECTION = 7
LOCAL_TRAIN = 8
DATASET = 9


def stream(seed, *keys):
    """A fresh ``numpy.random.Generator`` for ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))
