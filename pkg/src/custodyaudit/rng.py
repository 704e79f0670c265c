"""Deterministic random streams keyed by a master seed plus a path.

Every stochastic operation in the toolkit draws from a stream obtained via
substream(master_seed, *path), where the path names the consumer (experiment
tag, stratum, observation index, ...).  Streams with distinct paths are
statistically independent, and any stream can be re-derived from its key
alone, which makes results independent of worker scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _words(part) -> list[int]:
    if isinstance(part, (bool, np.bool_)):
        return [int(part)]
    if isinstance(part, (int, np.integer)):
        return [int(part) & _MASK64]
    if isinstance(part, str):
        digest = hashlib.blake2s(part.encode("utf-8"), digest_size=8).digest()
        return [int.from_bytes(digest, "big")]
    if isinstance(part, (tuple, list)):
        out: list[int] = []
        for p in part:
            out.extend(_words(p))
        return out
    raise TypeError(f"cannot key an rng stream with {type(part).__name__}")


def substream(master_seed: int, *path) -> np.random.Generator:
    """Return an independent generator keyed by (master_seed, *path)."""
    entropy = [int(master_seed) & _MASK64]
    for part in path:
        entropy.extend(_words(part))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(master_seed: int, *path) -> int:
    """A 63-bit integer seed derived deterministically from the key path."""
    h = hashlib.blake2s(digest_size=8)
    h.update((int(master_seed) & _MASK64).to_bytes(8, "big"))
    for part in path:
        for word in _words(part):
            h.update(word.to_bytes(8, "big"))
    return int.from_bytes(h.digest(), "big") >> 1
