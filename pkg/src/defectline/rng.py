"""Counter-based SplitMix64 stream.

SplitMix64 (Steele, Lea & Flood, 2014) advances a 64-bit state by the odd
constant ``0x9E3779B97F4A7C15`` and returns a bijective mix of the state.
Because the k-th output only depends on ``seed + k * gamma``, any output can
be computed directly, which is what lets the cluster explorer draw the
uniform of an edge on demand while reproducing the sequential stream.

Reference vector (seed 1234567, first five outputs)::

    6457827717110365317, 3203168211198807973, 9817491932198370423,
    4593380528125082431, 16408922859458223821

Conventions used across the package:

* the uniform attached to edge ``e`` of a configuration with seed ``s`` is
  output number ``e + 1`` of the stream started at ``s``, mapped to
  ``[0, 1)`` with the top 53 bits;
* replica ``r`` of a Monte Carlo run with master seed ``s`` uses the
  configuration seed ``replica_seed(s, r)``, i.e. output ``r + 1`` of the
  stream started at ``s``.
"""

import numpy as np
from numba import njit

GAMMA = np.uint64(0x9E3779B97F4A7C15)
MASK64 = (1 << 64) - 1
REFERENCE_SEED = 1234567
REFERENCE_OUTPUT = (
    6457827717110365317,
    3203168211198807973,
    9817491932198370423,
    4593380528125082431,
    16408922859458223821,
)

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(inline="always", cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(inline="always", cache=True)
def stream_uniform(key, k):
    """Output ``k + 1`` of the stream seeded at ``key``, as a double in [0, 1)."""
    return (mix64(key + np.uint64(k + 1) * GAMMA) >> _S11) * _INV53


def as_seed(seed):
    """Validate a seed and return it as a Python int in [0, 2**64)."""
    seed = int(seed)
    if seed < 0 or seed > MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def splitmix64(seed, count):
    """First ``count`` outputs of the SplitMix64 stream seeded at ``seed``."""
    k = np.arange(1, count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix_array(np.uint64(as_seed(seed)) + k * GAMMA)


def _mix_array(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        return z ^ (z >> _S31)


def uniforms(seed, count):
    """Uniforms in [0, 1) for counters 0..count-1 of the stream at ``seed``."""
    return (splitmix64(seed, count) >> _S11).astype(np.float64) * _INV53


def replica_seed(seed, replica):
    """Configuration seed of replica ``replica`` under master seed ``seed``."""
    z = (as_seed(seed) + (int(replica) + 1) * int(GAMMA)) & MASK64
    return int(_mix_array(np.array([z], dtype=np.uint64))[0])
