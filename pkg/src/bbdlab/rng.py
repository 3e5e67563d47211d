"""Seedable, splittable random-number plumbing.

Every stochastic choice in the package flows through a numpy Generator
derived from a SeedSequence, so a run is fully determined by its root
seed.  Parallel work items receive pre-spawned child streams; results
are then aggregated in submission order, which keeps serial and
threaded execution bit-identical.
"""

import numpy as np


def make_rng(seed):
    """Root generator for a run."""
    return np.random.default_rng(np.random.SeedSequence(seed))


def spawn_rngs(seed, n):
    """n independent child generators, deterministic in (seed, n)."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.default_rng(c) for c in children]
