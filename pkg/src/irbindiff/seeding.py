"""Deterministic seed derivation.

Every random decision in the package draws from a numpy Generator whose
seed is derived from the run's root seed plus a stable stage/key path, so
independent stages never share streams and reruns are byte-identical.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root_seed: int, *parts: str | int) -> int:
    """Hash (root_seed, parts...) into a 64-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root_seed)).encode())
    for part in parts:
        h.update(b"\x1f")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "little")


def rng_for(root_seed: int, *parts: str | int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, *parts))
