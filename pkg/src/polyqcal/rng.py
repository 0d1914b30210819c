"""Deterministic stream derivation.

Every random draw in the toolkit comes from a generator keyed by
(root seed, domain tag, *indices), so batches parallelise without
coordination and re-runs with the same root seed reproduce bit-identical
results regardless of scheduling.
"""

from __future__ import annotations

import numpy as np

# domain tags keep unrelated stages off each other's streams
DOMAIN_DESIGN = 1
DOMAIN_SIM = 2
DOMAIN_GP = 3
DOMAIN_MCMC = 4
DOMAIN_VALIDATE = 5
DOMAIN_PREDICT = 6
DOMAIN_INIT = 7


def substream(root_seed: int, *key: int) -> np.random.Generator:
    """Generator for the (root, *key) counter stream."""
    entropy = [int(root_seed)] + [int(k) for k in key]
    if any(k < 0 for k in entropy):
        raise ValueError("stream keys must be non-negative integers")
    return np.random.default_rng(entropy)
