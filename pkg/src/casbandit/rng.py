"""Seeded random sources.

Every stochastic component draws from its own substream, derived from the run
seed and a component tag.  The generator is numpy's ``Philox`` (a
counter-based generator, Philox4x64-10) seeded through ``SeedSequence`` with
``entropy=seed`` and ``spawn_key=(tag_key,)``, where ``tag_key`` is the first
four bytes (little endian) of ``sha256(tag)``.  A port to another language can
reproduce a stream by implementing the same derivation.
"""

from __future__ import annotations

import hashlib

import numpy as np

MAX_SEED = 2**64 - 1


def tag_key(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:4], "little")


def substream(seed: int, tag: str) -> np.random.Generator:
    """Return the generator for component ``tag`` under run seed ``seed``."""
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    seq = np.random.SeedSequence(int(seed), spawn_key=(tag_key(tag),))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, tag: str) -> int:
    """A child 64-bit seed, used for repeated runs of one configuration."""
    seq = np.random.SeedSequence(int(seed), spawn_key=(tag_key(tag),))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
