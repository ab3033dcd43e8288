"""Counter-based random streams usable from numba kernels.

State is a single uint64 held in a length-1 array so jitted code can advance
it in place.  Streams are derived by hashing (seed, counter) so any pixel or
sample can be reproduced without replaying the others.
"""

import numpy as np
from numba import njit, uint64

_GOLDEN = uint64(0x9E3779B97F4A7C15)
_M1 = uint64(0xBF58476D1CE4E5B9)
_M2 = uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> uint64(30))) * _M1
    z = (z ^ (z >> uint64(27))) * _M2
    return z ^ (z >> uint64(31))


@njit(cache=True)
def stream_state(seed, counter):
    return mix64(uint64(seed) * _GOLDEN + mix64(uint64(counter) + _GOLDEN))


@njit(cache=True, inline="always")
def next_u64(state):
    state[0] = state[0] + _GOLDEN
    return mix64(state[0])


@njit(cache=True, inline="always")
def next_float(state):
    """Uniform double in [0, 1)."""
    return float(next_u64(state) >> uint64(11)) * _INV53


def new_state(seed, counter=0):
    return np.array([stream_state(np.uint64(seed), np.uint64(counter))], dtype=np.uint64)
