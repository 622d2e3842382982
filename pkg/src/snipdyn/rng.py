"""Deterministic random-stream derivation.

Every stochastic component of the package draws from a substream addressed
by a root seed plus a tuple of small integers.  Substreams with different
keys are statistically independent and can be rebuilt from the key alone,
so parallel and serial execution of the same experiment produce identical
numbers.
"""

from __future__ import annotations

import numpy as np

Seed = int | np.random.SeedSequence


def derive(seed: Seed, *key: int) -> np.random.SeedSequence:
    """Child seed sequence for ``seed`` extended by integer ``key``.

    Deriving from an already-derived sequence appends to its spawn key, so
    nested components can namespace their own streams without coordination.
    """
    key = tuple(int(k) for k in key)
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(
            entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + key
        )
    return np.random.SeedSequence(entropy=int(seed), spawn_key=key)


def generator(seed: Seed, *key: int) -> np.random.Generator:
    """Generator seeded from the ``(seed, key)`` substream."""
    return np.random.Generator(np.random.PCG64(derive(seed, *key)))


def seed_key(seed: Seed) -> tuple:
    """Hashable description of a seed, used for provenance records."""
    if isinstance(seed, np.random.SeedSequence):
        return (seed.entropy, tuple(seed.spawn_key))
    return (int(seed), ())
