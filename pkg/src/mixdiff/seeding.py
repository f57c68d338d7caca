"""Counter-based derivation of per-purpose seeds from one global seed.

``stream_seed(g, purpose, i)`` hashes ``(g, crc32(purpose), i)`` through
:class:`numpy.random.SeedSequence`; streams for different purposes or indices
never share draws, and adding a new purpose leaves existing ones untouched.
"""

import zlib

import numpy as np


def stream_seed(global_seed, purpose, index=0):
    key = zlib.crc32(purpose.encode("utf-8"))
    seq = np.random.SeedSequence([int(global_seed), key, int(index)])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def stream_rng(global_seed, purpose, index=0):
    return np.random.default_rng(stream_seed(global_seed, purpose, index))
