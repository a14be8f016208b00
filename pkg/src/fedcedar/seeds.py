"""Deterministic RNG streams derived from a master seed.

Every random draw in the simulator comes from a generator keyed by
``(master_seed, domain, *indices)``, hashed through numpy's SeedSequence.
The domain constants below keep the streams for data generation, model
initialization, client sampling, local training, and clustering independent
of one another, so a run is reproducible regardless of the order in which
components consume randomness.
"""

from __future__ import annotations

import numpy as np

DATA = 1
MODEL_INIT = 2
SAMPLING = 3
LOCAL_TRAIN = 4
KMEANS = 5

# SeedSequence entropy must be non-negative; fold signed keys into 63 bits.
_KEY_MOD = 2**63


def stream(*keys: int) -> np.random.Generator:
    """Generator for the stream identified by the given key tuple."""
    entropy = [int(k) % _KEY_MOD for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(*keys: int) -> int:
    """Collapse a key tuple into a single reusable integer seed."""
    entropy = [int(k) % _KEY_MOD for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])
