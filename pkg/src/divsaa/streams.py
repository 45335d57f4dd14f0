"""Counter-based seeding: every (base seed, design cell) gets its own stream.

Stream ids come from the SplitMix64 finalizer, a bijection on 64-bit words.
For a fixed base seed the id is injective in ``(n_index, rep)`` as long as
both fit in 32 bits, so design cells never share a stream.
"""

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix64(base_seed: int, n_index: int, rep: int) -> int:
    if not (0 <= n_index < 1 << 32 and 0 <= rep < 1 << 32):
        raise ValueError("n_index and rep must fit in 32 bits")
    return splitmix64(splitmix64(base_seed & _MASK) ^ ((n_index << 32) | rep))


def generator(stream_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(stream_id))
