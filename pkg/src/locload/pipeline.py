"""Single-machine prefetching data loader.

A coordinator keeps up to ``prefetch_depth`` batch requests outstanding on a
pool of ``workers`` threads. Each worker loads the samples of its batch
through its own pool of ``intra_batch_parallelism`` threads. Completed
batches pass through a reorder buffer so they reach the consumer in step
order, whatever order they finish in.
"""
from __future__ import annotations

import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import batches, make_rng, permute_epoch
from .errors import InvalidConfigError, InvalidDatasetError, SampleLoadError

FILENAME_WIDTH = 8
SUFFIX = ".bin"


def sample_filename(i: int) -> str:
    return f"{i:0{FILENAME_WIDTH}d}{SUFFIX}"


@dataclass(frozen=True)
class DatasetSpec:
    root: Path
    n: int
    sample_bytes: int

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        if self.n < 1:
            raise InvalidDatasetError(f"n must be >= 1, got {self.n}")
        if self.sample_bytes < 0:
            raise InvalidDatasetError(f"sample_bytes must be >= 0, got {self.sample_bytes}")

    def path(self, i: int) -> Path:
        return self.root / sample_filename(i)

    def validate(self) -> None:
        for i in range(self.n):
            p = self.path(i)
            try:
                size = p.stat().st_size
            except FileNotFoundError:
                raise SampleLoadError(i, p, "missing") from None
            if size != self.sample_bytes:
                raise SampleLoadError(i, p, f"{size} bytes, expected {self.sample_bytes}")


def sample_content(seed: int, i: int, nbytes: int) -> bytes:
    return make_rng(seed, i).bytes(nbytes)


def generate_dataset(spec: DatasetSpec, seed: int = 0) -> DatasetSpec:
    """Write ``spec.n`` files of ``spec.sample_bytes`` pseudo-random bytes each.

    File ``i`` depends only on ``(seed, i)``, so regenerating is idempotent.
    """
    spec.root.mkdir(parents=True, exist_ok=True)
    for i in range(spec.n):
        p = spec.path(i)
        try:
            p.write_bytes(sample_content(seed, i, spec.sample_bytes))
        except OSError as e:
            raise OSError(f"writing sample {i} to {p}: {e}") from e
    return spec


@dataclass(frozen=True)
class Preprocess:
    """Injected per-sample preprocessing cost: ``none``, ``sleep`` or ``spin``."""

    kind: str = "none"
    micros: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "sleep", "spin"):
            raise InvalidConfigError(f"unknown preprocess kind {self.kind!r}")
        if self.micros < 0:
            raise InvalidConfigError("preprocess delay must be >= 0")

    @classmethod
    def parse(cls, text: str) -> "Preprocess":
        """``none``, ``sleep:1000`` or ``spin:250`` (microseconds per sample)."""
        kind, _, us = text.partition(":")
        if kind == "none":
            return cls()
        try:
            return cls(kind, float(us))
        except ValueError:
            raise InvalidConfigError(f"bad preprocess spec {text!r}") from None

    def __str__(self):
        return "none" if self.kind == "none" else f"{self.kind}:{self.micros:g}"

    def __call__(self, data: bytes) -> bytes:
        if self.kind == "sleep":
            time.sleep(self.micros / 1e6)
        elif self.kind == "spin":
            end = time.perf_counter() + self.micros / 1e6
            while time.perf_counter() < end:
                pass
        return data


@dataclass(frozen=True)
class LoaderConfig:
    workers: int = 1
    intra_batch_parallelism: int = 1
    prefetch_depth: int = 2
    batch_size: int = 64
    preprocess: Preprocess = field(default_factory=Preprocess)
    cache_capacity: int | None = None  # None: cache off

    def __post_init__(self):
        for name in ("workers", "intra_batch_parallelism", "prefetch_depth", "batch_size"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.cache_capacity is not None and self.cache_capacity < 0:
            raise InvalidConfigError("cache capacity must be >= 0")
        if isinstance(self.preprocess, str):
            object.__setattr__(self, "preprocess", Preprocess.parse(self.preprocess))


class SampleCache:
    """Fixed-capacity in-memory cache, filled on first touch, never evicted.

    Lookups take no lock (a dict read is atomic under the GIL); inserts are
    serialised so the capacity bound holds.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._data: dict[int, bytes] = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._data)

    def __contains__(self, i):
        return i in self._data

    def get(self, i: int):
        return self._data.get(i)

    def offer(self, i: int, data: bytes) -> bool:
        if len(self._data) >= self.capacity:
            return False
        with self._lock:
            if i in self._data or len(self._data) >= self.capacity:
                return False
            self._data[i] = data
            return True


@dataclass
class LoadedBatch:
    step: int
    samples: np.ndarray
    data: list
    latency_s: float
    hits: int
    misses: int


@dataclass
class ThroughputReport:
    epoch: int
    samples_loaded: int
    wall_time_s: float
    batch_latencies_s: list
    cache_hits: int
    cache_misses: int
    batch_order: list = field(default_factory=list, repr=False)

    @property
    def samples_per_second(self) -> float:
        return self.samples_loaded / self.wall_time_s if self.wall_time_s > 0 else float("inf")

    @property
    def hit_rate(self) -> float:
        return self.cache_hits / self.samples_loaded if self.samples_loaded else 0.0

    def as_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "samples_loaded": self.samples_loaded,
            "wall_time_s": self.wall_time_s,
            "samples_per_second": self.samples_per_second,
            "cache_hits": self.cache_hits,
            "cache_misses": self.cache_misses,
            "hit_rate": self.hit_rate,
            "batch_latency_mean_s": float(np.mean(self.batch_latencies_s)) if self.batch_latencies_s else 0.0,
            "batch_latency_max_s": max(self.batch_latencies_s, default=0.0),
        }


_STOP = object()


class _Worker(threading.Thread):
    def __init__(self, loader: "PrefetchLoader", requests: queue.Queue):
        super().__init__(daemon=True)
        self.loader = loader
        self.requests = requests

    def run(self):
        t = self.loader.cfg.intra_batch_parallelism
        pool = ThreadPoolExecutor(t) if t > 1 else None
        try:
            while True:
                item = self.requests.get()
                if item is _STOP:
                    return
                step, samples, reply, cancelled = item
                if cancelled.is_set():
                    reply.put((step, None))
                    continue
                try:
                    reply.put((step, self.loader._load_batch(step, samples, pool)))
                except BaseException as e:  # handed to the coordinator
                    reply.put((step, e))
        finally:
            if pool is not None:
                pool.shutdown(wait=True)


class PrefetchLoader:
    """Ordered, prefetching batch loader over a :class:`DatasetSpec`.

    Use as a context manager, or call :meth:`close`, so worker threads are
    joined.
    """

    def __init__(self, spec: DatasetSpec, cfg: LoaderConfig, cache: SampleCache | None = None):
        self.spec = spec
        self.cfg = cfg
        if cache is None and cfg.cache_capacity is not None:
            cache = SampleCache(cfg.cache_capacity)
        self.cache = cache
        self._requests: queue.Queue = queue.Queue()
        self._workers = [_Worker(self, self._requests) for _ in range(cfg.workers)]
        for w in self._workers:
            w.start()
        self._closed = False

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._closed:
            return
        self._closed = True
        for _ in self._workers:
            self._requests.put(_STOP)
        for w in self._workers:
            w.join()

    def _load_sample(self, i: int):
        hit = False
        data = self.cache.get(i) if self.cache is not None else None
        if data is not None:
            hit = True
        else:
            path = self.spec.path(i)
            try:
                with open(path, "rb") as f:
                    data = f.read()
            except FileNotFoundError:
                raise SampleLoadError(i, path, "missing") from None
            except OSError as e:
                raise SampleLoadError(i, path, str(e)) from e
            if len(data) != self.spec.sample_bytes:
                raise SampleLoadError(i, path, f"{len(data)} bytes, expected {self.spec.sample_bytes}")
            if self.cache is not None:
                self.cache.offer(i, data)
        return self.cfg.preprocess(data), hit

    def _load_chunk(self, ids):
        return [self._load_sample(i) for i in ids]

    def _load_batch(self, step, samples, pool) -> LoadedBatch:
        t0 = time.perf_counter()
        ids = samples.tolist()
        if pool is None:
            loaded = [self._load_sample(i) for i in ids]
        else:
            # one contiguous chunk of ceil(b / T) samples per thread
            t = self.cfg.intra_batch_parallelism
            k = -(-len(ids) // t)
            chunks = [ids[j:j + k] for j in range(0, len(ids), k)]
            loaded = [x for part in pool.map(self._load_chunk, chunks) for x in part]
        hits = sum(h for _, h in loaded)
        return LoadedBatch(step, samples, [d for d, _ in loaded],
                           time.perf_counter() - t0, hits, len(ids) - hits)

    def iter_batches(self, batch_list):
        """Load ``batch_list`` (a sequence of GlobalBatch) and yield in order."""
        if self._closed:
            raise RuntimeError("loader is closed")
        reply: queue.Queue = queue.Queue()
        cancelled = threading.Event()
        depth = self.cfg.prefetch_depth
        n = len(batch_list)
        submitted = delivered = 0
        in_flight = 0
        pending: dict[int, LoadedBatch] = {}
        try:
            while delivered < n:
                while submitted < n and submitted - delivered < depth:
                    b = batch_list[submitted]
                    self._requests.put((submitted, b.samples, reply, cancelled))
                    submitted += 1
                    in_flight += 1
                while delivered not in pending:
                    idx, res = reply.get()
                    in_flight -= 1
                    if isinstance(res, BaseException):
                        raise res
                    pending[idx] = res
                out = pending.pop(delivered)
                out.step = batch_list[delivered].step
                delivered += 1
                yield out
        finally:
            cancelled.set()
            while in_flight:
                reply.get()
                in_flight -= 1

    def iter_epoch(self, seed: int, epoch: int):
        perm = permute_epoch(seed, epoch, self.spec.n)
        return self.iter_batches(batches(perm, self.cfg.batch_size))

    def run_epoch(self, seed: int, epoch: int, consume=None) -> ThroughputReport:
        latencies, order = [], []
        hits = misses = loaded = 0
        t0 = time.perf_counter()
        for lb in self.iter_epoch(seed, epoch):
            if consume is not None:
                consume(lb)
            latencies.append(lb.latency_s)
            order.append(tuple(lb.samples.tolist()))
            hits += lb.hits
            misses += lb.misses
            loaded += len(lb.samples)
        wall = time.perf_counter() - t0
        return ThroughputReport(epoch, loaded, wall, latencies, hits, misses, order)


def run_epoch(spec: DatasetSpec, cfg: LoaderConfig, seed: int = 0, epoch: int = 0,
              consume=None) -> ThroughputReport:
    """Load one full epoch with a fresh loader and report throughput."""
    with PrefetchLoader(spec, cfg) as loader:
        return loader.run_epoch(seed, epoch, consume)


def warm_cache_epoch(spec: DatasetSpec, cfg: LoaderConfig, seed: int = 0, epoch: int = 0):
    """Run two consecutive epochs sharing one cache; returns ``(cold, warm)``."""
    cap = cfg.cache_capacity if cfg.cache_capacity is not None else spec.n
    cache = SampleCache(cap)
    with PrefetchLoader(spec, cfg, cache) as loader:
        cold = loader.run_epoch(seed, epoch)
        warm = loader.run_epoch(seed, epoch + 1)
    return cold, warm
