import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for the stream named by ``(seed, *keys)``.

    Distinct key tuples give statistically independent streams, so callers
    derive sub-streams (per restart, per repetition) without sharing state.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
