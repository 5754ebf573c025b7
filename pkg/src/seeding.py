"""Seed fan-out: one global seed, independent labeled streams per stage."""

import hashlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    """Derive a 32-bit seed for a named stage.

    Adding a new stage never perturbs the streams of existing stages because
    each stream depends only on (seed, label).
    """
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def stage_rng(seed: int, label: str) -> np.random.Generator:
    """Numpy generator for a named stage."""
    return np.random.default_rng(derive_seed(seed, label))
