import itertools
import threading

import pytest
from hypothesis import given, settings, strategies as st

from locload.core import batches, permute_epoch
from locload.errors import InvalidConfigError, SampleLoadError
from locload.pipeline import (DatasetSpec, LoaderConfig, PrefetchLoader, Preprocess, SampleCache,
                              generate_dataset, run_epoch, sample_filename, warm_cache_epoch)


def core_order(spec, bs, seed, epoch):
    return [tuple(b.samples.tolist()) for b in batches(permute_epoch(seed, epoch, spec.n), bs)]


def test_filename_layout():
    assert sample_filename(7) == "00000007.bin"
    assert sample_filename(12345678) == "12345678.bin"


def test_generate(tmp_path):
    spec = generate_dataset(DatasetSpec(tmp_path / "a", 100, 1024), seed=5)
    files = sorted((tmp_path / "a").iterdir())
    assert len(files) == 100
    assert sum(f.stat().st_size for f in files) == 102_400
    spec.validate()
    before = [f.read_bytes() for f in files]
    generate_dataset(spec, seed=5)
    assert [f.read_bytes() for f in files] == before
    generate_dataset(DatasetSpec(tmp_path / "b", 100, 1024), seed=6)
    assert (tmp_path / "b" / files[0].name).read_bytes() != before[0]


def test_preprocess_parse():
    assert Preprocess.parse("none") == Preprocess()
    assert Preprocess.parse("sleep:1000") == Preprocess("sleep", 1000)
    assert str(Preprocess.parse("spin:25")) == "spin:25"
    with pytest.raises(InvalidConfigError):
        Preprocess.parse("decode:3")


def test_config_validation():
    with pytest.raises(InvalidConfigError):
        LoaderConfig(workers=0)
    assert LoaderConfig(preprocess="sleep:5").preprocess == Preprocess("sleep", 5)


def test_exact_content_and_accounting(small_dataset):
    spec = small_dataset
    seen = {}

    def consume(lb):
        for i, data in zip(lb.samples.tolist(), lb.data):
            seen[i] = data

    cfg = LoaderConfig(workers=3, intra_batch_parallelism=2, prefetch_depth=4, batch_size=24)
    rep = run_epoch(spec, cfg, seed=1, epoch=0, consume=consume)
    assert rep.samples_loaded == (256 // 24) * 24
    assert rep.cache_hits + rep.cache_misses == rep.samples_loaded
    assert rep.samples_per_second == pytest.approx(rep.samples_loaded / rep.wall_time_s)
    assert len(rep.batch_latencies_s) == 256 // 24
    for i, data in seen.items():
        assert data == spec.path(i).read_bytes()


@pytest.mark.parametrize("w,t,f", list(itertools.product([1, 2, 4, 8], repeat=3)))
def test_ordered_delivery(small_dataset, w, t, f):
    cfg = LoaderConfig(workers=w, intra_batch_parallelism=t, prefetch_depth=f, batch_size=16,
                       preprocess=Preprocess("spin", 5))
    rep = run_epoch(small_dataset, cfg, seed=w * 100 + t * 10 + f, epoch=1)
    assert rep.batch_order == core_order(small_dataset, 16, w * 100 + t * 10 + f, 1)


@settings(max_examples=25, deadline=None)
@given(w=st.integers(1, 16), t=st.integers(1, 16), f=st.integers(1, 16))
def test_no_deadlock(small_dataset, w, t, f):
    cfg = LoaderConfig(workers=w, intra_batch_parallelism=t, prefetch_depth=f, batch_size=32)
    result = {}
    th = threading.Thread(target=lambda: result.setdefault("r", run_epoch(small_dataset, cfg, 0, 0)))
    th.start()
    th.join(timeout=30)
    assert not th.is_alive(), "epoch did not finish"
    assert result["r"].samples_loaded == 256


def test_cache_full_capacity(small_dataset):
    cfg = LoaderConfig(workers=2, intra_batch_parallelism=2, batch_size=32, cache_capacity=256)
    cold, warm = warm_cache_epoch(small_dataset, cfg, seed=0)
    assert cold.cache_misses == 256 and cold.cache_hits == 0
    assert warm.cache_hits == 256 and warm.cache_misses == 0


def test_cache_zero_capacity(small_dataset):
    cfg = LoaderConfig(batch_size=32, cache_capacity=0)
    cold, warm = warm_cache_epoch(small_dataset, cfg, seed=0)
    assert cold.cache_hits == warm.cache_hits == 0


def test_cache_half_capacity(small_dataset):
    cfg = LoaderConfig(workers=4, batch_size=32, cache_capacity=128)
    cold, warm = warm_cache_epoch(small_dataset, cfg, seed=2)
    assert warm.hit_rate == pytest.approx(0.5, abs=0.05)


def test_warm_not_slower_without_preprocessing(tmp_path):
    spec = generate_dataset(DatasetSpec(tmp_path, 512, 4096), seed=0)
    cfg = LoaderConfig(batch_size=64, cache_capacity=512)
    cold, warm = warm_cache_epoch(spec, cfg)
    # one retry guards against scheduler noise on a loaded machine
    if warm.wall_time_s > cold.wall_time_s:
        cold, warm = warm_cache_epoch(spec, cfg)
    assert warm.wall_time_s <= cold.wall_time_s


def test_cache_capacity_bound():
    c = SampleCache(2)
    assert c.offer(1, b"a") and c.offer(2, b"b")
    assert not c.offer(3, b"c")
    assert not c.offer(1, b"z")
    assert c.get(1) == b"a" and c.get(3) is None and len(c) == 2


def test_missing_sample_names_id(tmp_path):
    spec = generate_dataset(DatasetSpec(tmp_path, 64, 16), seed=0)
    spec.path(17).unlink()
    with pytest.raises(SampleLoadError) as e:
        run_epoch(spec, LoaderConfig(workers=2, batch_size=16), 0, 0)
    assert e.value.sample_id == 17
    with pytest.raises(SampleLoadError):
        spec.validate()


def test_truncated_sample(tmp_path):
    spec = generate_dataset(DatasetSpec(tmp_path, 64, 16), seed=0)
    spec.path(5).write_bytes(b"short")
    with pytest.raises(SampleLoadError, match="sample 5"):
        run_epoch(spec, LoaderConfig(intra_batch_parallelism=4, batch_size=16), 0, 0)


def test_early_close_leaves_no_threads(small_dataset):
    before = threading.active_count()
    cfg = LoaderConfig(workers=4, intra_batch_parallelism=4, prefetch_depth=8, batch_size=8,
                       preprocess=Preprocess("sleep", 200))
    with PrefetchLoader(small_dataset, cfg) as loader:
        it = loader.iter_epoch(0, 0)
        next(it)
        it.close()
        # loader remains usable after an abandoned epoch
        rep = loader.run_epoch(0, 1)
        assert rep.batch_order == core_order(small_dataset, 8, 0, 1)
    assert threading.active_count() == before
