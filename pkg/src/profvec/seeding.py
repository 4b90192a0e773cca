"""One global seed fans out into named, independent sub-seeds.

``derive_seed(7, "embed/fold3")`` hashes the pair with SHA-256 and keeps the
low 63 bits, so every consumer gets a stable stream that does not depend on
the order in which other consumers asked for theirs.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}/{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def rng_for(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, label))
