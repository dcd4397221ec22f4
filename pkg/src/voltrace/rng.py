"""Seeding policy: every stochastic operation takes an explicit integer seed.

Generators are Philox (counter-based), so streams derived from distinct seeds
are independent and reproducible across platforms. `derive_seed` builds stable
child seeds from a master seed plus arbitrary labels, which is how sweep cells
and replications get their own streams.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["rng_from", "derive_seed"]


def _as_entropy(part: object) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & (2**64 - 1)
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"seed components must be int or str, got {type(part).__name__}")


def rng_from(seed: int) -> np.random.Generator:
    """Fresh Philox generator for the given seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(_as_entropy(seed))))


def derive_seed(master: int, *parts: object) -> int:
    """Stable 64-bit child seed from a master seed and a label path.

    Independent of PYTHONHASHSEED; identical inputs give identical seeds on
    every platform, distinct label paths give (statistically) distinct seeds.
    """
    entropy = [_as_entropy(master)] + [_as_entropy(p) for p in parts]
    ss = np.random.SeedSequence(entropy)
    return int(ss.generate_state(1, np.uint64)[0])
