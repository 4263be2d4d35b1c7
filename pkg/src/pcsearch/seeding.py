"""Deterministic seed derivation.

Every random decision in the package flows from one root seed through
``derive_seed(root, *labels)``. The derivation hashes the root together with
string labels, so independent subsystems ("data", "train", "search", ...)
get decorrelated streams while staying reproducible across runs and
platforms. Python's builtin ``hash`` is salted per process and must never be
used for this.
"""

import hashlib

import numpy as np


def derive_seed(root, *labels):
    """Derive a child seed from a root seed and a label path.

    Returns an integer in [0, 2**63) suitable for numpy's default_rng.
    """
    text = "|".join([str(int(root))] + [str(part) for part in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng_for(root, *labels):
    """numpy Generator seeded from ``derive_seed(root, *labels)``."""
    return np.random.default_rng(derive_seed(root, *labels))
