"""
Seeded random streams for mTBI-BoW.

All randomness goes through Philox counter-based generators keyed by
``SeedSequence(seed, spawn_key=(stream, index, ...))``. A task therefore owns
an independent stream that depends only on its identity, never on the order
or process in which tasks are scheduled.
"""
from typing import Tuple

import numpy as np

# Stream identifiers; part of the determinism contract, do not renumber.
STREAM_SYNTH_PATTERNS = 1
STREAM_SYNTH_SUBJECT = 2
STREAM_KMEANS_RESTART = 3
STREAM_CV_SPLIT = 4
STREAM_HONEST_CODEBOOK = 5

MASK_64 = (1 << 64) - 1


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """
    Build the generator for one task.

    Args:
        seed: Unsigned 64-bit root seed
        *key: Non-negative integers identifying the task

    Returns:
        np.random.Generator: Philox generator for this task
    """
    return np.random.Generator(np.random.Philox(derive_seed_sequence(seed, *key)))


def derive_seed_sequence(seed: int, *key: int) -> np.random.SeedSequence:
    """Seed sequence for ``(seed, key)``."""
    spawn_key: Tuple[int, ...] = tuple(int(k) for k in key)
    return np.random.SeedSequence(int(seed) & MASK_64, spawn_key=spawn_key)


def derive_seed(seed: int, *key: int) -> int:
    """Child 64-bit seed for ``(seed, key)``, for APIs that take plain integers."""
    state = derive_seed_sequence(seed, *key).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 32) | int(state[1])
