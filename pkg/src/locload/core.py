"""Epoch permutations and global mini-batch sequencing.

Every learner derives the same sample order from ``(seed, epoch)`` alone, so
no communication is needed to agree on a step's global batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidBatchSizeError, InvalidDatasetError

_U64 = (1 << 64) - 1


def _frozen(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    a.setflags(write=False)
    return a


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed on ``(seed, stream)``.

    Philox output depends only on the 128-bit key, so the same pair yields the
    same stream on every platform and in every process.
    """
    key = ((int(seed) & _U64) << 64) | (int(stream) & _U64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, *path: int) -> int:
    ss = np.random.SeedSequence([int(seed) & _U64, *(int(x) & _U64 for x in path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class EpochPermutation:
    seed: int
    epoch: int
    order: np.ndarray

    @property
    def d(self) -> int:
        return len(self.order)

    def __eq__(self, other):
        if not isinstance(other, EpochPermutation):
            return NotImplemented
        return (self.seed, self.epoch) == (other.seed, other.epoch) and np.array_equal(
            self.order, other.order
        )


@dataclass(frozen=True, eq=False)
class GlobalBatch:
    step: int
    samples: np.ndarray

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, GlobalBatch):
            return NotImplemented
        return self.step == other.step and np.array_equal(self.samples, other.samples)


def permute_epoch(seed: int, epoch: int, d: int) -> EpochPermutation:
    """Uniform random permutation of ``range(d)`` for one epoch."""
    if d < 1:
        raise InvalidDatasetError(f"dataset must hold at least one sample, got d={d}")
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    order = make_rng(seed, epoch).permutation(d)
    return EpochPermutation(seed=int(seed), epoch=int(epoch), order=_frozen(order))


def batches(perm: EpochPermutation, b: int) -> list[GlobalBatch]:
    """Split an epoch into ``d // b`` consecutive global batches.

    The trailing ``d % b`` samples are dropped.
    """
    d = perm.d
    if b < 1 or b > d:
        raise InvalidBatchSizeError(f"batch size must be in [1, {d}], got {b}")
    n = d // b
    return [GlobalBatch(step=t, samples=_frozen(perm.order[t * b:(t + 1) * b])) for t in range(n)]


def batch_stream(seed: int, d: int, b: int, first_epoch: int = 0):
    """Endless stream of global batches, reshuffling at every epoch boundary."""
    epoch = first_epoch
    while True:
        yield from batches(permute_epoch(seed, epoch, d), b)
        epoch += 1
