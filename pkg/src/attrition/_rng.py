"""Seeded random streams.

All randomness in the package flows from one root seed through named
sub-streams, so that results never depend on call order, worker count,
or a hidden global RNG.
"""

from __future__ import annotations

import hashlib

import numpy as np

_STREAM_BITS = 64


def _tag_to_int(tag: object) -> int:
    """Map an arbitrary stream tag (str, int, tuple, ...) to a stable uint64."""
    if isinstance(tag, (int, np.integer)):
        return int(tag) & (2**_STREAM_BITS - 1)
    digest = hashlib.sha256(repr(tag).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, *tags: object) -> np.random.Generator:
    """A generator for the sub-stream named by ``tags`` under ``seed``.

    The same (seed, tags) always yields the same stream, independent of any
    other stream that was created before or after it.
    """
    entropy = [int(seed) & (2**_STREAM_BITS - 1)] + [_tag_to_int(t) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def stream_seed(seed: int, *tags: object) -> int:
    """A stable derived uint64 seed (for kernels that take a raw integer)."""
    entropy = [int(seed) & (2**_STREAM_BITS - 1)] + [_tag_to_int(t) for t in tags]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])
