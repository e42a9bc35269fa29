"""Named seed derivation.

Every random draw in the package goes through :func:`derive_seed`, so a run
is fully determined by one root seed plus the stage labels along the way.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *labels: object) -> int:
    """Derive a 63-bit child seed from ``root`` and a path of labels."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "big") >> 1


def rng(root: int, *labels: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *labels))
