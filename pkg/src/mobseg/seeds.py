"""Named seed derivation so every random draw traces back to one root seed."""

import hashlib

import numpy as np


def derive_seed(root_seed: int, *labels) -> int:
    """Derive a child seed from a root seed and a path of labels.

    Labels may be strings or ints (e.g. ("join", region, trial)). The same
    path always yields the same child seed, independent of call order or
    platform.
    """
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode())
    for lab in labels:
        h.update(b"/")
        h.update(str(lab).encode())
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(root_seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, *labels))
