"""Named random substreams derived from one master seed.

Every stochastic component draws from ``substream(seed, *names)``; the
name tuple is hashed into the seed sequence, so adding a stage or
reordering calls never perturbs another component's stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(*names) -> list[int]:
    digest = hashlib.sha256("/".join(str(n) for n in names).encode("utf-8")).digest()
    return [int.from_bytes(digest[k:k + 4], "little") for k in range(0, 16, 4)]


def substream(seed: int, *names) -> np.random.Generator:
    """Independent generator for (seed, names); stable across platforms."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *stream_key(*names)]))
