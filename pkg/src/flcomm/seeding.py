"""Deterministic seed derivation for independent random streams.

A run has one master seed; every randomness consumer (data generation,
partitioning, model init, each client's shuffling / dropout / rounding)
gets its own stream derived from the master seed and a component name.
Toggling one mechanism therefore never perturbs another mechanism's draws.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def component_seed(master_seed: int, name: str) -> int:
    """Master seed XOR the first 8 bytes of sha256(name), as uint64."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    tag = int.from_bytes(digest[:8], "big")
    return (int(master_seed) ^ tag) & _MASK64


def component_rng(master_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(component_seed(master_seed, name))
