"""Deterministic seed derivation.

Every stochastic stage of a build derives its seed from stable labels
(tree id, node id, stage name, configured seed) instead of consuming a
shared random stream. Resuming an interrupted build therefore replays the
exact same draws as an uninterrupted one.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    label = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
