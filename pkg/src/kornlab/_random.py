import zlib

import numpy as np


def substream(seed, name):
    """Independent generator for the named stage, derived from one 64-bit seed."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.random.default_rng([seed & 0xFFFFFFFF, seed >> 32, zlib.crc32(name.encode())])


def as_generator(rng, name="sampling"):
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        rng = 0
    return substream(rng, name)
