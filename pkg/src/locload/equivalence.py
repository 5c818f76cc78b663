"""Simulated data-parallel SGD under regular and locality-aware sampling.

Learners are simulated in one thread. Each computes per-sample gradients of
a least-squares objective over its local assignment; the step's global
gradient is the sum over all learners divided by the global batch size.

With ``canonical=True`` the per-sample gradients of a step are sorted by
sample id before summation, which fixes the floating-point addition order
and makes runs that differ only in *who* computed each sample bitwise equal.
With ``canonical=False`` each learner sums its own gradients first and the
learner sums are then added in rank order, as an all-reduce would.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .balance import ImbalanceVector, balance
from .core import batch_stream, make_rng
from .sampling import CacheDirectory, loc_distribution, reg_distribution

SCHEMES = ("reg", "loc", "loc-balanced")
DIM = 8


@dataclass(frozen=True)
class ToyObjective:
    """Mean of per-sample losses ``0.5 * (x_i . w - y_i)**2``."""

    x: np.ndarray
    y: np.ndarray

    @classmethod
    def make(cls, d: int, m: int = DIM, seed: int = 0, noise: float = 0.1) -> "ToyObjective":
        rng = make_rng(seed, 0xE0)
        x = rng.standard_normal((d, m))
        w_true = rng.standard_normal(m)
        y = x @ w_true + noise * rng.standard_normal(d)
        x.setflags(write=False)
        y.setflags(write=False)
        return cls(x, y)

    @property
    def n(self) -> int:
        return len(self.y)

    def loss(self, w, ids=None) -> float:
        ids = slice(None) if ids is None else np.asarray(ids)
        r = self.x[ids] @ w - self.y[ids]
        return float(0.5 * np.mean(r * r))

    def sample_loss(self, w, i: int) -> float:
        r = float((self.x[i] * w).sum() - self.y[i])
        return 0.5 * r * r

    def sample_grads(self, w, ids) -> np.ndarray:
        """One gradient row per sample id.

        Rows are computed independently of each other so a sample's
        gradient does not depend on which other samples share the call.
        """
        ids = np.asarray(ids, dtype=np.int64)
        xs = self.x[ids]
        r = (xs * w).sum(axis=1) - self.y[ids]
        return r[:, None] * xs

    def full_batch_grad(self, w, ids) -> np.ndarray:
        """Dense reference gradient of the mean loss over ``ids``."""
        ids = np.asarray(ids, dtype=np.int64)
        xs = self.x[ids]
        return xs.T @ (xs @ w - self.y[ids]) / len(ids)


@dataclass
class TrainingRun:
    scheme: str
    p: int
    weights: np.ndarray          # (steps + 1, m): weights before each step, then final
    gradients: np.ndarray        # (steps, m): global gradient applied at each step
    batches: list                # global batch sample ids per step
    local_sizes: list            # per-step local batch sizes

    @property
    def final(self) -> np.ndarray:
        return self.weights[-1]


def _assign(scheme, batch, p, directory):
    if scheme == "reg":
        return [list(a.samples) for a in reg_distribution(batch, p)]
    dist = loc_distribution(batch, directory)
    local = [list(a.samples) for a in dist.full_assignments()]
    if scheme == "loc-balanced":
        for s, r, c in balance(ImbalanceVector.from_counts([len(a) for a in local])):
            moved, local[s] = local[s][-c:], local[s][:-c]
            local[r].extend(moved)
    return local


def aggregate(obj: ToyObjective, w, local, canonical: bool = True) -> np.ndarray:
    """Global gradient from per-learner sample assignments."""
    b = sum(len(a) for a in local)
    parts = [(np.asarray(a, dtype=np.int64), obj.sample_grads(w, a)) for a in local if len(a)]
    if canonical:
        ids = np.concatenate([i for i, _ in parts])
        g = np.concatenate([g for _, g in parts])
        total = g[np.argsort(ids, kind="stable")].sum(axis=0)
    else:
        total = np.zeros_like(w)
        for _, g in parts:
            total = total + g.sum(axis=0)
    return total / b


def run_training(scheme: str, p: int, steps: int, seed: int, batch_size: int = 12,
                 d: int = 120, lr: float = 0.05, canonical: bool = True,
                 obj: ToyObjective | None = None) -> TrainingRun:
    """Train the toy model for ``steps`` synchronous SGD steps."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    obj = obj if obj is not None else ToyObjective.make(d, seed=seed)
    d = obj.n
    directory = CacheDirectory(d, p, 1.0)
    stream = batch_stream(seed, d, batch_size)
    w = np.zeros(obj.x.shape[1])
    ws, gs, bs, sizes = [w.copy()], [], [], []
    for _ in range(steps):
        batch = next(stream)
        local = _assign(scheme, batch, p, directory)
        g = aggregate(obj, w, local, canonical)
        w = w - lr * g
        ws.append(w.copy())
        gs.append(g)
        bs.append(batch.samples)
        sizes.append([len(a) for a in local])
    return TrainingRun(scheme, p, np.array(ws), np.array(gs), bs, sizes)


def run_training_imbalanced_vs_balanced(p: int, steps: int, seed: int, batch_size: int = 64,
                                        d: int = 1024, lr: float = 0.05):
    """Final weights of locality-aware training without and with balancing."""
    obj = ToyObjective.make(d, seed=seed)
    a = run_training("loc", p, steps, seed, batch_size, lr=lr, obj=obj)
    b = run_training("loc-balanced", p, steps, seed, batch_size, lr=lr, obj=obj)
    return a.final, b.final


@dataclass(frozen=True)
class EquivalenceVerdict:
    identical: bool
    max_abs_diff: float
    max_oracle_rel_err: float
    runs: int


def check_equivalence(p_list, batch_sizes, seeds, steps: int = 100, d: int = 960,
                      lr: float = 0.05, canonical: bool = True) -> EquivalenceVerdict:
    """Run every applicable scheme per configuration and compare trajectories.

    ``reg`` is skipped when ``p`` does not divide the batch size. Gradients of
    the locality-aware runs are also checked against a dense full-batch
    gradient.
    """
    identical = True
    diff = 0.0
    rel = 0.0
    runs = 0
    for seed in seeds:
        obj = ToyObjective.make(d, seed=seed)
        for b in batch_sizes:
            for p in p_list:
                schemes = [s for s in SCHEMES if s != "reg" or b % p == 0]
                out = [run_training(s, p, steps, seed, b, lr=lr, canonical=canonical, obj=obj)
                       for s in schemes]
                runs += len(out)
                ref = out[0].weights
                for r in out[1:]:
                    identical &= bool(np.array_equal(ref, r.weights))
                    diff = max(diff, float(np.max(np.abs(ref - r.weights))))
                for r in out:
                    for t in range(steps):
                        o = obj.full_batch_grad(r.weights[t], r.batches[t])
                        e = np.linalg.norm(r.gradients[t] - o) / max(np.linalg.norm(o), 1e-300)
                        rel = max(rel, float(e))
    return EquivalenceVerdict(identical, diff, rel, runs)
