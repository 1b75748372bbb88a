"""Deterministic random-stream construction.

All randomness in the package flows through numpy's PCG64 bit generator,
seeded through ``numpy.random.SeedSequence``. Streams are namespaced by a
base seed plus string tags, so e.g. the dataset generator, teacher inits
and batch shuffling never share or overlap a stream. Identical
(seed, tags) always reproduce the identical stream; Gaussians come from
numpy's ziggurat ``standard_normal``, which is deterministic for a given
bit-generator state.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _entropy(seed: int, tags: tuple) -> list[int]:
    ent = [int(seed) & _MASK64]
    for tag in tags:
        if isinstance(tag, str):
            ent.append(zlib.crc32(tag.encode("utf-8")))
        else:
            ent.append(int(tag) & _MASK64)
    return ent


def make_rng(seed: int, *tags) -> np.random.Generator:
    """Build a Generator on an isolated, reproducible stream."""
    ss = np.random.SeedSequence(_entropy(seed, tags))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *tags) -> int:
    """Derive a 64-bit child seed from a base seed and namespace tags."""
    ss = np.random.SeedSequence(_entropy(seed, tags))
    return int(ss.generate_state(1, np.uint64)[0])
