"""Seeded random streams.

All randomness comes from numpy's PCG64 (128-bit LCG state, XSL-RR output)
seeded through ``SeedSequence``. Per-item streams are split off by mixing a
CRC-32 of the item key into the spawn key, so each sample id gets an
independent, reproducible stream regardless of processing order.
"""

from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed: int, key: str | None = None) -> np.random.Generator:
    spawn_key = () if key is None else (zlib.crc32(key.encode("utf-8")),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=spawn_key)))
