"""Named random streams derived from one run seed.

Each consumer draws from ``numpy.random.default_rng([seed, OFFSET])`` with a
fixed offset, so adding draws in one consumer never shifts another.
"""

import numpy as np

INIT = 1
SHUFFLE = 2
CORPUS = 3

STREAMS = {"init": INIT, "shuffle": SHUFFLE, "corpus": CORPUS}


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[name], *map(int, extra)])
