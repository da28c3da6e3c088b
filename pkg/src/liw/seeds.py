"""Deterministic seed derivation.

Every random draw in the toolkit flows from one master seed through
``derive_seed``: hashing (master, purpose tag, indices) keeps per-frame /
per-block randomness reproducible and independent of execution order or
parallelism.
"""

import hashlib


def derive_seed(master_seed: int, tag: str, *indices: int) -> int:
    """Derive a child seed from a master seed, a purpose tag and indices.

    Stable across platforms and runs: sha256 over a canonical text key,
    truncated to 64 bits.
    """
    key = ":".join([str(int(master_seed)), tag] + [str(int(i)) for i in indices])
    digest = hashlib.sha256(key.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little")
