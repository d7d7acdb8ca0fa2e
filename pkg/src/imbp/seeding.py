"""Deterministic stream derivation for reproducible Monte Carlo.

Every path gets its own counter-based generator keyed by
``(master_seed, lane, path_index)``, so results are byte-identical no matter
how paths are scheduled across workers.  Lanes keep logically distinct
ensembles (e.g. the two engines of an equivalence check) out of each other's
streams.
"""

from __future__ import annotations

import numpy as np


def path_rng(master_seed: int, path_index: int, lane: int = 0) -> np.random.Generator:
    """Generator for one path, independent of scheduling order."""
    seq = np.random.SeedSequence((int(master_seed), int(lane), int(path_index)))
    return np.random.Generator(np.random.Philox(seq))


def driver_rng(master_seed: int, path_index: int, kind: int, i: int, j: int = 0) -> np.random.Generator:
    """Substream for one driving process (walk / Poisson clock / Levy driver).

    Distinct drivers get independent streams, so the order in which driver
    families are queried never changes any family's marginal sequence.
    """
    seq = np.random.SeedSequence((int(master_seed), int(path_index), int(kind), int(i), int(j)))
    return np.random.Generator(np.random.Philox(seq))


class BufferedUniforms:
    """Amortized scalar access to ``Generator.random()``.

    Per-event simulation loops need a few uniforms per event; drawing them
    one call at a time dominates the runtime, so refill in blocks.
    """

    __slots__ = ("_rng", "_buf", "_pos", "_block")

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self._rng = rng
        self._block = block
        self._buf = rng.random(block)
        self._pos = 0

    def next(self) -> float:
        pos = self._pos
        if pos >= self._buf.shape[0]:
            self._buf = self._rng.random(self._block)
            pos = 0
        self._pos = pos + 1
        return self._buf[pos]
