"""Labelled seed derivation.

One master seed fans out into independent streams by hashing it together with
string/int labels, e.g. ``rng(seed, "refill")``. Streams for different labels
are independent and each is reproducible on its own.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *labels) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little")


def rng(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))
