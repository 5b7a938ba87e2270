"""Deterministic RNG substreams.

Every (round, phase, agent) context gets its own generator derived by
stable hashing from the master seed, never by sharing one generator, so
results are independent of call order and scheduling. blake2b is stable
across platforms and processes; Python's built-in hash() is not.
"""

from __future__ import annotations

import hashlib
import random


def substream_seed(seed: int, *tags: object) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode("ascii"))
    for tag in tags:
        h.update(b"\x1f")
        h.update(str(tag).encode("utf-8"))
    return int.from_bytes(h.digest(), "big")


def substream(seed: int, *tags: object) -> random.Random:
    """An independent generator for the given seed and context tags."""
    return random.Random(substream_seed(seed, *tags))
