"""Seeded random streams forked from one root seed by stable string labels."""

from __future__ import annotations

import zlib

import numpy as np


def label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def fork(seed: int, label: str) -> np.random.Generator:
    """Independent generator for component ``label`` under root ``seed``.

    The same (seed, label) pair always yields the same stream, regardless of
    how many other components were forked before it.
    """
    return np.random.default_rng([int(seed), label_key(label)])


def fork_seed(seed: int, label: str) -> int:
    """Integer seed for libraries that take one (torch)."""
    ss = np.random.SeedSequence([int(seed), label_key(label)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
