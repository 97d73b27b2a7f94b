"""Named counter-based random streams.

Every source of randomness in a run is a Philox stream addressed by
``(global_seed, *tags)``, so concurrent clients can never observe each
other's draws and any single stream can be reproduced in isolation.
"""

from __future__ import annotations

import zlib

import numpy as np


def _encode_tag(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8"))
    raise TypeError(f"stream tag must be int or str, got {type(tag).__name__}")


def _seed_sequence(seed: int, tags) -> np.random.SeedSequence:
    return np.random.SeedSequence((int(seed),) + tuple(_encode_tag(t) for t in tags))


def stream(seed: int, *tags) -> np.random.Generator:
    """Return the Philox generator for the stream named by ``tags``."""
    return np.random.Generator(np.random.Philox(_seed_sequence(seed, tags)))


def derive_seed(seed: int, *tags) -> int:
    """Collapse a stream name to a plain integer seed for APIs that take one."""
    return int(_seed_sequence(seed, tags).generate_state(1, np.uint64)[0])
