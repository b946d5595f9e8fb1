import zlib

import numpy as np

STREAMS = ("cohort", "split", "pairs", "dropout", "rl", "bootstrap", "forest", "random_policy")


def substream(seed, name):
    """Independent generator for a named stage, derived from the global seed."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


def as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
