"""Label-derived random substreams.

One counter-based generator (Philox) keyed by a hash of (seed, labels):
every stochastic stage draws from its own independent substream, so
adding a sweep dimension or reordering execution never perturbs the
noise seen by other stages.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for the given seed and label path."""
    tag = ":".join(str(l) for l in labels).encode()
    digest = hashlib.sha256(int(seed).to_bytes(16, "little", signed=True) + b"|" + tag)
    key = int.from_bytes(digest.digest()[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))
