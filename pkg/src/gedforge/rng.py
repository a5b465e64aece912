"""Named random substreams derived from one root seed."""

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    # crc32 keeps the stream id stable across interpreter runs (unlike hash())
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])
