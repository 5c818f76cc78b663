"""Greedy surplus/deficit transfer scheduling for locality-aware batches."""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import NamedTuple

from .errors import InconsistentImbalanceError, OracleLimitError

ORACLE_MAX_P = 10


def targets(b: int, p: int) -> list[int]:
    """Even split of ``b`` samples; the first ``b % p`` learners take one extra."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    q, r = divmod(b, p)
    return [q + 1 if j < r else q for j in range(p)]


@dataclass(frozen=True)
class ImbalanceVector:
    counts: tuple
    targets: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        tgts = tuple(int(t) for t in self.targets)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "targets", tgts)
        if len(counts) != len(tgts) or not counts:
            raise InconsistentImbalanceError(
                f"{len(counts)} counts vs {len(tgts)} targets"
            )
        if min(counts) < 0 or min(tgts) < 0:
            raise InconsistentImbalanceError("counts and targets must be non-negative")
        if sum(counts) != sum(tgts):
            raise InconsistentImbalanceError(
                f"counts sum to {sum(counts)} but targets sum to {sum(tgts)}"
            )
        if max(tgts) - min(tgts) > 1:
            raise InconsistentImbalanceError(f"targets differ by more than one: {tgts}")

    @classmethod
    def from_counts(cls, counts) -> "ImbalanceVector":
        counts = [int(c) for c in counts]
        return cls(tuple(counts), tuple(targets(sum(counts), len(counts))))

    @property
    def p(self) -> int:
        return len(self.counts)

    @property
    def b(self) -> int:
        return sum(self.targets)

    @property
    def delta(self) -> list[int]:
        """Surplus (positive) or deficit (negative) per learner."""
        return [c - t for c, t in zip(self.counts, self.targets)]


class Move(NamedTuple):
    sender: int
    receiver: int
    count: int


@dataclass(frozen=True)
class TransferSchedule:
    moves: tuple = ()

    def __len__(self):
        return len(self.moves)

    def __iter__(self):
        return iter(self.moves)

    def apply(self, counts) -> list[int]:
        out = list(counts)
        for s, r, c in self.moves:
            out[s] -= c
            out[r] += c
        return out

    def check(self, iv: ImbalanceVector) -> None:
        """Raise AssertionError unless this schedule balances ``iv``."""
        for mv in self.moves:
            if mv.sender == mv.receiver:
                raise AssertionError(f"self-transfer {mv}")
            if mv.count < 1:
                raise AssertionError(f"empty transfer {mv}")
        final = self.apply(iv.counts)
        if final != list(iv.targets):
            raise AssertionError(f"schedule ends at {final}, targets {list(iv.targets)}")
        if len(self.moves) > max(iv.p - 1, 0):
            raise AssertionError(f"{len(self.moves)} moves for p={iv.p}")


def balance(iv: ImbalanceVector) -> TransferSchedule:
    """Pair the largest surplus with the largest deficit until both are gone.

    Equal imbalances are broken towards the lowest learner id. Each round
    zeroes at least one heap entry, so there are at most ``p - 1`` moves and
    the loop is O(p log p).
    """
    surplus = [(-d, j) for j, d in enumerate(iv.delta) if d > 0]
    deficit = [(d, j) for j, d in enumerate(iv.delta) if d < 0]
    heapq.heapify(surplus)
    heapq.heapify(deficit)
    moves = []
    while surplus:
        ns, s = heapq.heappop(surplus)
        nd, r = heapq.heappop(deficit)
        m = min(-ns, -nd)
        moves.append(Move(s, r, m))
        if -ns > m:
            heapq.heappush(surplus, (ns + m, s))
        if -nd > m:
            heapq.heappush(deficit, (nd + m, r))
    return TransferSchedule(tuple(moves))


def optimal_message_count(iv: ImbalanceVector) -> int:
    """Exact minimum number of transfers, by subset dynamic programming.

    A schedule that splits the unbalanced learners into ``k`` independent
    zero-sum groups needs at least ``n - k`` messages, and a spanning tree in
    each group achieves that. ``best[mask]`` is the largest number of
    zero-sum groups that ``mask`` can be cut into.
    """
    if iv.p > ORACLE_MAX_P:
        raise OracleLimitError(f"exhaustive search limited to p <= {ORACLE_MAX_P}, got {iv.p}")
    vals = [d for d in iv.delta if d]
    n = len(vals)
    if n == 0:
        return 0
    full = (1 << n) - 1
    total = [0] * (full + 1)
    best = [0] * (full + 1)
    for mask in range(1, full + 1):
        low = mask & -mask
        total[mask] = total[mask ^ low] + vals[low.bit_length() - 1]
        b = 0
        m = mask
        while m:
            bit = m & -m
            b = max(b, best[mask ^ bit])
            m ^= bit
        best[mask] = b + (total[mask] == 0)
    return n - best[full]


def beta(iv: ImbalanceVector) -> float:
    """Fraction of the batch that has to move: total deficit over batch size."""
    b = iv.b
    if b == 0:
        return 0.0
    return sum(max(0, t - c) for c, t in zip(iv.counts, iv.targets)) / b
