"""Stable derivation of sub-seeds from a command seed."""

import hashlib

import numpy as np


def derive_seed(seed: int, *names) -> int:
    """Return a 64-bit seed derived from ``seed`` and component ``names``.

    The derivation hashes the decimal seed and the names with SHA-256, so it is
    stable across processes and Python versions (unlike ``hash``).
    """
    key = ":".join([str(int(seed))] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *names))
