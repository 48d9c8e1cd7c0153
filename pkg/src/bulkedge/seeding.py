"""Counter-based seed derivation for reproducible disorder substreams.

A realization's seed depends only on ``(master_seed, realization_index)``,
so any subset of an ensemble can be regenerated in any order, on any number
of workers, and produce identical disorder.

The mix is the SplitMix64 output function applied to a Weyl-sequence
counter::

    x = master_seed + (index + 1) * 0x9E3779B97F4A7C15      (mod 2**64)
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9                (mod 2**64)
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB                (mod 2**64)
    x =  x ^ (x >> 31)

Both stages are bijections of 64-bit words, so for a fixed master the map
``index -> seed`` is injective over all 2**64 indices.
"""

from __future__ import annotations

import numpy as np

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_1 = 0xBF58476D1CE4E5B9
MIX_2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1


def derive_seed(master_seed, realization_index):
    """Return the 64-bit substream seed for one realization.

    Parameters
    ----------
    master_seed : int or array_like of int
        Ensemble master seed, reduced modulo 2**64.
    realization_index : int or array_like of int
        Non-negative realization counter.

    Returns
    -------
    int or numpy.ndarray
        A Python ``int`` for scalar input, otherwise a ``uint64`` array
        broadcast over both arguments.
    """
    if np.isscalar(master_seed) and np.isscalar(realization_index):
        if int(realization_index) < 0:
            raise ValueError("realization_index must be non-negative")
        x = (int(master_seed) + (int(realization_index) + 1) * GOLDEN_GAMMA) & MASK64
        x = ((x ^ (x >> 30)) * MIX_1) & MASK64
        x = ((x ^ (x >> 27)) * MIX_2) & MASK64
        return x ^ (x >> 31)

    master = np.asarray(master_seed).astype(np.uint64)
    index = np.asarray(realization_index)
    if np.any(index < 0):
        raise ValueError("realization_index must be non-negative")
    index = index.astype(np.uint64)
    # uint64 arithmetic wraps modulo 2**64, which is exactly what we want
    with np.errstate(over="ignore"):
        x = master + (index + np.uint64(1)) * np.uint64(GOLDEN_GAMMA)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(MIX_1)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(MIX_2)
        return x ^ (x >> np.uint64(31))


def substream(master_seed: int, realization_index: int) -> np.random.Generator:
    """Return an independent PCG64 generator for one realization."""
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, realization_index)))
