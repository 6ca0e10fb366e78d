"""Replica seed derivation.

A single 64-bit master seed fans out to replica streams through a
SplitMix64 finalizer, so replica sets extend without re-running earlier
replicas and distinct (experiment, replica) labels never collide.
"""

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def splitmix64(x):
    """One SplitMix64 output step for a 64-bit input."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def replica_seed(master, replica, stream=0):
    """seed_r = splitmix64(master + (stream << 32) + replica + 1)."""
    return splitmix64((int(master) + ((int(stream) & 0xFFFFFFFF) << 32)
                       + int(replica) + 1) & _MASK)


def replica_rng(master, replica, stream=0):
    return np.random.default_rng(replica_seed(master, replica, stream))
