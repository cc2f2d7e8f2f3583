"""Keyed counter-based random streams.

Every stochastic step draws from its own Philox stream keyed by
``(seed, item id, stage)``. Draws for one item therefore never depend on how
many other items were processed before it or on which thread ran them.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, item_id: str, stage: str) -> int:
    """128-bit key derived from ``(seed, item_id, stage)``."""
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    h = hashlib.blake2b(digest_size=16)
    h.update(seed.to_bytes(8, "little"))
    for part in (item_id, stage):
        raw = part.encode("utf-8")
        h.update(len(raw).to_bytes(8, "little"))
        h.update(raw)
    return int.from_bytes(h.digest(), "little")


def keyed_rng(seed: int, item_id: str, stage: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, item_id, stage)))
