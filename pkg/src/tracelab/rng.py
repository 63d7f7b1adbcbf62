"""Seed derivation for reproducible, independently replayable trials."""

from __future__ import annotations

import zlib

import numpy as np


def _key(value) -> int:
    if isinstance(value, float):
        # stable integer key for grid probabilities
        return int(round(value * 1_000_000_000))
    if isinstance(value, str):
        return zlib.crc32(value.encode())
    return int(value)


def derive_seed(base_seed: int, *keys) -> int:
    """64-bit seed for the stream identified by ``keys`` under ``base_seed``.

    The split is counter based, so the seed for trial ``t`` of a cell does not
    depend on how many other trials were drawn.
    """
    seq = np.random.SeedSequence(int(base_seed), spawn_key=tuple(_key(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def make_rng(base_seed: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(base_seed, *keys)))
