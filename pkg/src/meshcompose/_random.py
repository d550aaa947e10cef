"""Seeded random streams.

All randomness is drawn from numpy's Philox generator (counter-based, so the
stream for a given key is identical on every platform).  A stream is keyed by
the user's 64-bit seed plus an optional tuple of small integers naming the
consumer, which keeps independent stages from sharing draws.
"""

import numpy as np


def rng(seed, *stream):
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))
