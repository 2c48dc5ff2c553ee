"""Named random substreams.

All randomness in a run flows from the single manifest seed; each consumer
(data drawing, parameter init, evaluation, ...) gets its own independent
stream derived from the seed plus a name, so adding a consumer never
perturbs the others.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream"]


def substream(seed: int, *names: str) -> np.random.Generator:
    """Deterministic generator for (seed, *names), stable across platforms."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for name in names:
        digest = hashlib.sha256(name.encode("utf-8")).digest()
        entropy.append(int.from_bytes(digest[:4], "little"))
    return np.random.default_rng(np.random.SeedSequence(entropy))
