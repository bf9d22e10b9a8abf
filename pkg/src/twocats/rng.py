"""Seeded random streams.

Every stochastic routine in the package draws from numpy's ``Philox``
bit generator (a counter-based 4x64 generator, Salmon et al. 2011),
so a seed reproduces the same stream on every platform numpy supports.
"""

import numpy as np

DEFAULT_SEED = 30091985


def make_rng(seed=DEFAULT_SEED):
    """Return a ``numpy.random.Generator`` backed by Philox for ``seed``.

    A ``Generator`` passes through unchanged so helpers can share a stream.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(int(seed)))
