"""Deterministic random number generation.

Every stochastic operation in the package (weight init, dropout masks,
augmentation draws, shuffles, corpus synthesis) draws from an :class:`RngState`.
The underlying generator is numpy's Philox, a counter-based bit generator whose
stream is fixed for a given key, so identical seeds plus identical call
sequences reproduce identical values on every platform.

Independent streams are derived with :meth:`RngState.derive`, which folds
string/integer tags into the Philox key via BLAKE2b. Derivation is stateless:
deriving the same tags from the same seed always yields the same stream, which
is what lets per-sample work run in parallel without changing results.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["RngState"]


def _tag_to_int(tag: int | str) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngState:
    """A seeded Philox stream plus a stable derivation path."""

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        if seed < 0 or seed > 0xFFFFFFFFFFFFFFFF:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._path = _path
        ss = np.random.SeedSequence(entropy=(self.seed,) + _path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    @property
    def algorithm(self) -> str:
        return "philox4x64 (numpy.random.Philox, keyed via SeedSequence)"

    def derive(self, *tags: int | str) -> "RngState":
        """A fresh independent stream for (seed, existing path, tags)."""
        return RngState(self.seed, self._path + tuple(_tag_to_int(t) for t in tags))

    # Draw helpers; all consume from the single underlying stream in call order.

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def normal(self, scale: float = 1.0, size=None) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def random(self, size=None):
        return self._gen.random(size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, path={self._path})"
