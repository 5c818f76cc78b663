"""Analytical per-epoch cost model for distributed data loading.

All rates are in samples per second and all times in seconds per epoch.
Local cache hits are treated as free.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

from .errors import InvalidConfigError

SCHEMES = ("regular", "distcache", "locality")


@dataclass(frozen=True)
class ModelParams:
    """Model constants.

    d: dataset size (samples); p: node count; v: per-node training rate;
    r: storage I/O rate; r_c: remote-cache I/O rate; r_b: load-balancing I/O
    rate; u: per-node preprocessing rate; alpha: cached fraction of the
    dataset; beta: fraction of each batch moved for load balancing.
    ``r_c >> r`` is expected but not enforced.
    """

    d: float
    p: int
    v: float
    r: float
    r_c: float = 1.0
    r_b: float = 1.0
    u: float = float("inf")
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.d < 1 or self.p < 1:
            raise InvalidConfigError(f"d and p must be >= 1 (d={self.d}, p={self.p})")
        for name in ("v", "r", "r_c", "r_b", "u"):
            if not getattr(self, name) > 0:
                raise InvalidConfigError(f"rate {name} must be > 0, got {getattr(self, name)}")
        if not 0 <= self.alpha <= 1:
            raise InvalidConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0 <= self.beta < 1:
            raise InvalidConfigError(f"beta must be in [0, 1), got {self.beta}")

    def with_(self, **kw) -> "ModelParams":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return asdict(self)


# Illustrative only: no measured rates are published for the original system.
DEFAULT_PARAMS = ModelParams(
    d=1_281_167, p=1, v=1200.0, r=24_000.0, r_c=200_000.0, r_b=200_000.0,
    u=6000.0, alpha=1.0, beta=0.048,
)


@dataclass(frozen=True)
class CostBreakdown:
    training_s: float
    sample_io_s: float
    preprocessing_s: float

    @property
    def data_loading_s(self) -> float:
        return self.sample_io_s + self.preprocessing_s

    @property
    def true_cost_s(self) -> float:
        return max(self.training_s, self.data_loading_s)

    @property
    def waiting_s(self) -> float:
        """Time the trainer idles on data when loading overlaps training."""
        return max(0.0, self.data_loading_s - self.training_s)


def training_time(mp: ModelParams) -> float:
    return mp.d / (mp.p * mp.v)


def io_time_regular(mp: ModelParams) -> float:
    return mp.d / mp.r


def preprocessing_time(mp: ModelParams) -> float:
    return mp.d / (mp.p * mp.u)


def data_loading_time(mp: ModelParams) -> float:
    return io_time_regular(mp) + preprocessing_time(mp)


def crossover_p(mp: ModelParams) -> float:
    """Node count above which storage I/O, not training, bounds an epoch."""
    return mp.r / mp.v


def true_cost(mp: ModelParams) -> float:
    """Epoch cost assuming preprocessing is negligible (``u >> v``)."""
    if mp.p <= crossover_p(mp):
        return mp.d / (mp.p * mp.v)
    return mp.d / mp.r


def io_time_distcache(mp: ModelParams) -> float:
    storage = (1 - mp.alpha) * mp.d / mp.r
    remote = mp.alpha * mp.d / mp.r_c * ((mp.p - 1) / mp.p)
    return storage + remote


def io_time_locality(mp: ModelParams) -> float:
    storage = (1 - mp.alpha) * mp.d / mp.r
    balancing = mp.alpha * mp.d / mp.r_b * mp.beta
    return storage + balancing


_IO = {
    "regular": io_time_regular,
    "distcache": io_time_distcache,
    "locality": io_time_locality,
}


def io_time(mp: ModelParams, scheme: str) -> float:
    try:
        return _IO[scheme](mp)
    except KeyError:
        raise InvalidConfigError(f"unknown scheme {scheme!r}; choose from {SCHEMES}") from None


def cost_breakdown(mp: ModelParams, scheme: str = "regular") -> CostBreakdown:
    """Full breakdown; ``true_cost_s`` keeps the preprocessing term."""
    return CostBreakdown(training_time(mp), io_time(mp, scheme), preprocessing_time(mp))


def true_cost_extended(mp: ModelParams, scheme: str = "regular") -> float:
    return cost_breakdown(mp, scheme).true_cost_s
