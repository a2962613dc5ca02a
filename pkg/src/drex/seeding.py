import zlib

import numpy as np


def substream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Independent generator for a named consumer of the run seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode()), int(index)))
    return np.random.default_rng(ss)
