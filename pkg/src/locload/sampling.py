"""Regular (block-slice) and locality-aware distribution of a global batch."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import GlobalBatch
from .errors import InvalidFractionError, UnevenSliceError

NOT_CACHED = -1


@dataclass(frozen=True)
class CacheDirectory:
    """Replicated sample -> learner map over a block-partitioned cache.

    The lowest ``floor(alpha * d)`` sample indices are cached; cached sample
    ``i`` lives on learner ``i * p // cached_count``. Nothing is stored per
    entry, so every learner computes the same directory from ``(d, p, alpha)``.
    """

    d: int
    p: int
    alpha: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if not (0 < self.alpha <= 1):
            raise InvalidFractionError(f"alpha must be in (0, 1], got {self.alpha}")

    @property
    def cached_count(self) -> int:
        # tolerate float noise in alpha * d (0.29 * 100 == 28.999...)
        return min(self.d, math.floor(self.alpha * self.d + 1e-9))

    def owner(self, i: int):
        """Learner caching sample ``i``, or None when it is not cached."""
        c = self.cached_count
        if not 0 <= i < self.d:
            raise IndexError(f"sample {i} outside [0, {self.d})")
        if i >= c:
            return None
        return i * self.p // c

    def owners(self, samples) -> np.ndarray:
        """Vectorised :meth:`owner`; uncached samples map to ``NOT_CACHED``."""
        s = np.asarray(samples, dtype=np.int64)
        c = self.cached_count
        out = np.full(s.shape, NOT_CACHED, dtype=np.int64)
        hit = s < c
        if c:
            out[hit] = s[hit] * self.p // c
        return out

    def owned(self, j: int) -> range:
        c = self.cached_count
        # smallest i with i * p // c >= j is ceil(j * c / p)
        lo = -(-j * c // self.p)
        hi = -(-(j + 1) * c // self.p)
        return range(lo, hi)

    def owned_sizes(self) -> list[int]:
        return [len(self.owned(j)) for j in range(self.p)]


@dataclass(frozen=True)
class LocalAssignment:
    learner: int
    samples: tuple
    step: int

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class LocDistribution:
    """Result of looking a global batch up in the cache directory.

    ``counts[j]`` is the number of batch samples cached on learner ``j``;
    ``uncached`` keeps batch order.
    """

    step: int
    counts: tuple
    assignments: tuple
    uncached: tuple

    @property
    def p(self) -> int:
        return len(self.counts)

    def uncached_share(self) -> list[list[int]]:
        # the k-th uncached sample of the batch goes to learner k mod p
        share: list[list[int]] = [[] for _ in range(self.p)]
        for k, s in enumerate(self.uncached):
            share[k % self.p].append(s)
        return share

    def local_sizes(self) -> list[int]:
        """Per-learner local batch size before balancing, storage loads included."""
        share = self.uncached_share()
        return [c + len(u) for c, u in zip(self.counts, share)]

    def full_assignments(self) -> list[LocalAssignment]:
        share = self.uncached_share()
        return [
            LocalAssignment(a.learner, a.samples + tuple(u), a.step)
            for a, u in zip(self.assignments, share)
        ]


def reg_slice(batch: GlobalBatch, p: int, j: int) -> LocalAssignment:
    """Learner ``j``'s even block slice of the global batch."""
    b = len(batch)
    if p < 1 or not 0 <= j < p:
        raise ValueError(f"learner {j} outside [0, {p})")
    if b % p:
        raise UnevenSliceError(f"batch of {b} cannot be split evenly over {p} learners")
    w = b // p
    return LocalAssignment(j, tuple(int(s) for s in batch.samples[w * j:w * (j + 1)]), batch.step)


def reg_distribution(batch: GlobalBatch, p: int) -> list[LocalAssignment]:
    return [reg_slice(batch, p, j) for j in range(p)]


def loc_distribution(batch: GlobalBatch, directory: CacheDirectory) -> LocDistribution:
    """Assign each batch sample to the learner that caches it."""
    owners = directory.owners(batch.samples)
    per: list[list[int]] = [[] for _ in range(directory.p)]
    uncached = []
    for s, o in zip(batch.samples.tolist(), owners.tolist()):
        if o == NOT_CACHED:
            uncached.append(s)
        else:
            per[o].append(s)
    return LocDistribution(
        step=batch.step,
        counts=tuple(len(x) for x in per),
        assignments=tuple(LocalAssignment(j, tuple(x), batch.step) for j, x in enumerate(per)),
        uncached=tuple(uncached),
    )


def loc_counts(samples, directory: CacheDirectory) -> np.ndarray:
    """Fast path for per-learner cached counts only (uncached samples ignored)."""
    owners = directory.owners(samples)
    return np.bincount(owners[owners != NOT_CACHED], minlength=directory.p)
