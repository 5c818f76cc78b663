"""Monte Carlo studies: batch imbalance, balls-in-bins tails, epoch cost curves."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model
from .balance import ImbalanceVector, beta, targets
from .core import batch_stream, derive_seed, make_rng
from .errors import InvalidConfigError
from .sampling import CacheDirectory, loc_counts

DEFAULT_D = 1_280_000
SWEEP_P = (8, 16, 32, 64)
SWEEP_LOCAL_BATCH = (32, 64, 128)


@dataclass(frozen=True)
class BoxSummary:
    n: int
    mean: float
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float

    @classmethod
    def of(cls, x) -> "BoxSummary":
        x = np.sort(np.asarray(x, dtype=float))
        q1, med, q3 = np.percentile(x, [25, 50, 75])
        iqr = q3 - q1
        inside = x[(x >= q1 - 1.5 * iqr) & (x <= q3 + 1.5 * iqr)]
        return cls(len(x), float(x.mean()), float(med), float(q1), float(q3),
                   float(inside.min()), float(inside.max()))


@dataclass(frozen=True)
class ImbalanceStats:
    d: int
    p: int
    local_batch: int
    steps: int
    seed: int
    betas: np.ndarray = field(repr=False)

    @property
    def summary(self) -> BoxSummary:
        return BoxSummary.of(self.betas)


def simulate_imbalance(d: int, p: int, local_batch: int, steps: int, seed: int) -> ImbalanceStats:
    """Per-step balancing fraction for locality-aware loading over a full cache.

    Global batches of ``p * local_batch`` are drawn from the shuffled epoch
    stream and looked up in an evenly block-partitioned directory.
    """
    b = p * local_batch
    if p < 1 or local_batch < 1:
        raise InvalidConfigError("p and local_batch must be >= 1")
    if b > d:
        raise InvalidConfigError(f"global batch {b} exceeds dataset size {d}")
    if steps < 1:
        raise InvalidConfigError(f"steps must be >= 1, got {steps}")
    directory = CacheDirectory(d, p, 1.0)
    tgt = tuple(targets(b, p))
    out = np.empty(steps)
    stream = batch_stream(seed, d, b)
    for t in range(steps):
        counts = loc_counts(next(stream).samples, directory)
        out[t] = beta(ImbalanceVector(tuple(counts.tolist()), tgt))
    out.setflags(write=False)
    return ImbalanceStats(d, p, local_batch, steps, seed, out)


def imbalance_sweep(p_list=SWEEP_P, local_batches=SWEEP_LOCAL_BATCH, d=DEFAULT_D, steps=500, seed=0):
    """One :class:`ImbalanceStats` per (p, local batch), each on its own derived seed."""
    return [
        simulate_imbalance(d, p, lb, steps, derive_seed(seed, p, lb))
        for lb in local_batches
        for p in p_list
    ]


@dataclass(frozen=True)
class BallsBinsCheck:
    b: int
    p: int
    alpha_param: float
    k_alpha: float
    empirical_exceed_rate: float
    trials: int
    mean_max_load: float


def k_alpha(b: float, p: int, alpha_param: float) -> float:
    """Max-load threshold ``b/p + alpha * sqrt(2 (b/p) ln p)``."""
    m = b / p
    return m + alpha_param * math.sqrt(2 * m * math.log(p))


def balls_in_bins_check(b: int, p: int, alpha_param: float, trials: int, seed: int) -> BallsBinsCheck:
    """Fraction of trials in which the fullest of ``p`` bins holds more than K_alpha balls."""
    if trials < 1 or p < 2 or not alpha_param > 1:
        raise InvalidConfigError("need trials >= 1, p >= 2 and alpha_param > 1")
    rng = make_rng(seed)
    k = k_alpha(b, p, alpha_param)
    maxima = np.empty(trials, dtype=np.int64)
    chunk = 2048
    for lo in range(0, trials, chunk):
        n = min(chunk, trials - lo)
        bins = rng.integers(0, p, size=(n, b))
        flat = (np.arange(n)[:, None] * p + bins).ravel()
        loads = np.bincount(flat, minlength=n * p).reshape(n, p)
        maxima[lo:lo + n] = loads.max(axis=1)
    return BallsBinsCheck(b, p, alpha_param, k, float(np.mean(maxima > k)), trials,
                          float(maxima.mean()))


@dataclass(frozen=True)
class EpochCostRow:
    p: int
    scheme: str
    epoch: int
    beta: float
    training_s: float
    io_s: float
    preprocess_s: float
    data_loading_s: float
    waiting_s: float
    total_s: float


def simulate_epoch_costs(mp_base: model.ModelParams, p_list, scheme: str, epochs: int = 1,
                         seed: int = 0, local_batch: int = 64, imbalance_steps: int = 200,
                         draw_beta: bool = True):
    """Epoch cost table across node counts with loading overlapped with training.

    For the locality scheme beta is the mean balancing fraction measured by
    :func:`simulate_imbalance` for that node count and epoch instead of the
    value in ``mp_base`` (unless ``draw_beta`` is false).
    """
    p_list = list(p_list)
    if not p_list:
        raise InvalidConfigError("p_list is empty")
    if scheme not in model.SCHEMES:
        raise InvalidConfigError(f"unknown scheme {scheme!r}")
    rows = []
    d = int(mp_base.d)
    for p in p_list:
        for e in range(epochs):
            bt = mp_base.beta
            if scheme == "locality" and draw_beta:
                if p == 1:
                    bt = 0.0
                else:
                    stats = simulate_imbalance(d, p, local_batch, imbalance_steps,
                                               derive_seed(seed, p, e))
                    bt = float(stats.betas.mean())
            mp = mp_base.with_(p=p, beta=bt)
            cb = model.cost_breakdown(mp, scheme)
            rows.append(EpochCostRow(p, scheme, e, bt, cb.training_s, cb.sample_io_s,
                                     cb.preprocessing_s, cb.data_loading_s, cb.waiting_s,
                                     cb.true_cost_s))
    return rows
