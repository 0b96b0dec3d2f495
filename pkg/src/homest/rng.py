"""Deterministic random streams for reproducible experiments.

All randomness in the library flows through `stream`, which returns a
counter-based (Philox) generator keyed by a master seed plus an arbitrary
sequence of purpose tags and replicate indices.  Streams with different
keys are statistically independent, and the same key reproduces the same
draws on any platform, so replicate loops may run in any order or in
parallel without losing determinism.
"""

import hashlib

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _tag_to_int(tag):
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK64
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(master_seed, *tags):
    """Return a `numpy.random.Generator` keyed by (master_seed, *tags).

    Tags may be strings (hashed stably, never with Python's salted hash)
    or integers such as replicate indices.
    """
    entropy = [int(master_seed) & _MASK64] + [_tag_to_int(t) for t in tags]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
