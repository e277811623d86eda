"""Seed derivation on top of numpy's counter-based Philox generator.

Every random draw in the package goes through :func:`make_rng` with a master
seed and a path of tags, so a suspect built on any worker in any order gets
the same stream.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _tag_words(tags) -> list[int]:
    words = []
    for tag in tags:
        digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
        words.append(int.from_bytes(digest[:4], "little"))
    return words


def derive_seed(seed: int, *tags) -> int:
    """Return a 63-bit child seed for ``(seed, *tags)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_tag_words(tags)))
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> 1)


def make_rng(seed: int, *tags) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_tag_words(tags)))
    return np.random.Generator(np.random.Philox(ss))
