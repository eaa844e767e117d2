"""Deterministic RNG substream derivation.

Every stochastic component draws from its own child of a root SeedSequence,
keyed by fixed stream tags plus loop indices. Derivation is pure arithmetic
on the key tuple, so results do not depend on call order or on how work is
scheduled across samples.
"""

from __future__ import annotations

import numpy as np

STREAM_INIT = 0
STREAM_AUG = 1
STREAM_TEACHER_NOISE = 2
STREAM_STUDENT_NOISE = 3
STREAM_SAMPLER = 4
STREAM_CUTMIX = 5
STREAM_SAMPLE = 6


def root(seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed))


def child(seq: np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        entropy=seq.entropy, spawn_key=tuple(seq.spawn_key) + tuple(int(k) for k in key)
    )


def generator(seq: np.random.SeedSequence, *key: int) -> np.random.Generator:
    if key:
        seq = child(seq, *key)
    return np.random.default_rng(seq)
