"""Site-addressed random streams.

Every uniform is a pure function of ``(seed, replica, stream, substream,
site)``: blocks of 256 consecutive sites are generated by a Philox
bit generator whose counter encodes the block, so sites can be queried in
any order and always yield the same value.
"""

from __future__ import annotations

import threading

import numpy as np

from .kernel import DecrementLaw

BLOCK_BITS = 8
BLOCK = 1 << BLOCK_BITS
_MASK = BLOCK - 1
_MASK64 = (1 << 64) - 1
_BLOCK_INDEX_MOD = 1 << 56
_SCALE = 2.0**-53

# purpose tags
DECREMENT = 0
COUPLING = 1
INVARIANT = 2
STAR = 3
BOUNDARY = 4
DISTANCE = 5


_local = threading.local()


def _philox(seed: int):
    cache = getattr(_local, "gens", None)
    if cache is None:
        cache = _local.gens = {}
    entry = cache.get(seed)
    if entry is None:
        if len(cache) > 64:
            cache.clear()
        gen = np.random.Philox(key=[seed, 0])
        entry = cache[seed] = (gen, gen.state)
    return entry


def derive_seed(seed: int, *words: int) -> int:
    """Independent 64-bit seed derived from ``seed`` and extra words."""
    ss = np.random.SeedSequence([seed & _MASK64, *[w & _MASK64 for w in words]])
    return int(ss.generate_state(1, np.uint64)[0])


class RandomSource:
    """Memoized per-site randomness for one replica.

    ``decrement(n)`` is ``K_n`` (drawn from ``law`` by inverse CDF) and
    ``uniform(COUPLING, n)`` is ``U_n``. Other tags give auxiliary streams
    that are independent of those two.
    """

    def __init__(self, law: DecrementLaw | None, seed: int, replica: int = 0, substream: int = 0):
        self.law = law
        self.seed = int(seed) & _MASK64
        self.replica = int(replica)
        self.substream = int(substream)
        self._words = (self.replica & _MASK64, self.substream & _MASK64)
        self._blocks: dict[tuple[int, int], list[float]] = {}
        self._k_blocks: dict[int, list[int]] = {}
        self.k_queries = 0

    def for_replica(self, replica: int) -> "RandomSource":
        return RandomSource(self.law, self.seed, replica, self.substream)

    def child(self, substream: int, law: DecrementLaw | None = None) -> "RandomSource":
        return RandomSource(law if law is not None else self.law, self.seed, self.replica, substream)

    def _raw_block(self, tag: int, b: int) -> np.ndarray:
        gen, st = _philox(self.seed)
        st["state"]["counter"][:] = ((b % _BLOCK_INDEX_MOD) << 7, tag, *self._words)
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        gen.state = st
        raw = gen.random_raw(BLOCK)
        return (raw >> np.uint64(11)).astype(np.float64) * _SCALE

    def block(self, tag: int, b: int) -> list[float]:
        key = (tag, b)
        blk = self._blocks.get(key)
        if blk is None:
            blk = self._raw_block(tag, b).tolist()
            self._blocks[key] = blk
        return blk

    def uniform(self, tag: int, site: int) -> float:
        blk = self._blocks.get((tag, site >> BLOCK_BITS))
        if blk is None:
            blk = self.block(tag, site >> BLOCK_BITS)
        return blk[site & _MASK]

    def decrement(self, site: int) -> int:
        self.k_queries += 1
        b = site >> BLOCK_BITS
        blk = self._k_blocks.get(b)
        if blk is None:
            blk = self.law.sample_many(self._raw_block(DECREMENT, b))
            self._k_blocks[b] = blk
        return blk[site & _MASK]
