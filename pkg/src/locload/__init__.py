"""Locality-aware distributed data loading: sampling schemes, load balancing,
cost model, imbalance simulation and a prefetching loader."""

__version__ = "0.1.0"
