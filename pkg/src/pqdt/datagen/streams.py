"""Per-sample random streams.

Every generated sample owns a counter-based generator keyed by
(global seed, model id, view id), so the output of a sample never depends
on which worker produced it or in which order.
"""

from __future__ import annotations

import zlib

import numpy as np


def model_key(model_id: str | int) -> int:
    """Stable 32-bit key for a model identifier (CRC-32 of its UTF-8 name)."""
    if isinstance(model_id, (int, np.integer)):
        return int(model_id) & 0xFFFFFFFF
    return zlib.crc32(str(model_id).encode("utf-8"))


def sample_rng(seed: int, model_id: str | int, view_id: int = 0) -> np.random.Generator:
    if seed < 0 or view_id < 0:
        raise ValueError(f"sample_rng: seed and view_id must be >= 0, got {seed}, {view_id}")
    ss = np.random.SeedSequence([int(seed), model_key(model_id), int(view_id)])
    return np.random.Generator(np.random.Philox(ss))


def sample_seed(seed: int, model_id: str | int, view_id: int = 0) -> int:
    """A 63-bit integer digest of the stream key, recorded in manifests."""
    ss = np.random.SeedSequence([int(seed), model_key(model_id), int(view_id)])
    hi, lo = (int(w) for w in ss.generate_state(2, np.uint32))
    return ((hi << 32) | lo) >> 1
