"""Named, reproducible RNG streams derived from a single root seed."""

import zlib

import numpy as np


def substream(seed, *keys):
    """Return a Generator for the stream named by `keys` under `seed`.

    Streams with different key tuples are statistically independent, and the
    mapping is stable across runs and platforms, so components (shuffling,
    augmentation, init, ...) can draw randomness without interfering.
    Keys may be ints or strings; they are hashed into the seed material.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    entropy.extend(zlib.crc32(str(k).encode("utf-8")) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy))
