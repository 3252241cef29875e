"""Deterministic RNG streams derived from a master seed plus labels.

Every random decision in a run draws from a stream named by component
and index, so results are reproducible and independent of evaluation
order or thread scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from any mix of ints and strings."""
    digest = hashlib.sha256(repr(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
