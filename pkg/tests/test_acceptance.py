"""Exit criteria. Each test prints one PASS/FAIL line (visible with ``-s`` or ``-v -rA``)."""
import csv
import itertools
import json
import math
import random
import time

import pytest

from locload import model
from locload.balance import ImbalanceVector, balance, beta, optimal_message_count
from locload.cli import REFERENCE_MEDIANS, main
from locload.core import batches, permute_epoch
from locload.equivalence import check_equivalence
from locload.model import ModelParams
from locload.pipeline import LoaderConfig, Preprocess, run_epoch, warm_cache_epoch
from locload.simulate import balls_in_bins_check


@pytest.fixture
def report(capsys):
    def _report(name, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return _report


def test_1_imbalance_medians(report, tmp_path, capsys):
    out = tmp_path / "medians.csv"
    t0 = time.perf_counter()
    code = main(["imbalance", "--p-list", "8,16,32,64", "--local-batch", "32,64,128",
                 "--d", "1280000", "--steps", "500", "--summary-only", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    capsys.readouterr()
    assert code == 0
    rows = [r for r in csv.DictReader(out.read_text().splitlines()[1:]) if r["kind"] == "summary"]
    ok = elapsed < 120
    detail = []
    for lb, ref in REFERENCE_MEDIANS.items():
        meds = [float(r["median"]) for r in rows if int(r["local_batch"]) == lb]
        assert len(meds) == 4
        good = all(abs(m - ref) <= 0.01 for m in meds) and max(meds) - min(meds) <= 0.01
        ok &= good
        detail.append(f"lb={lb} medians={[round(m, 4) for m in meds]} ref={ref}")
    report("1 imbalance medians", ok, "; ".join(detail) + f"; {elapsed:.1f}s")


def test_2_scheme_equivalence(report):
    t0 = time.perf_counter()
    v = check_equivalence([1, 2, 3, 4, 8], [12, 64], range(5), steps=100)
    elapsed = time.perf_counter() - t0
    ok = v.identical and v.max_abs_diff == 0 and v.max_oracle_rel_err <= 1e-12 and elapsed < 30
    report("2 reg/loc/loc+balance equivalence", ok,
           f"runs={v.runs} identical={v.identical} oracle_rel_err={v.max_oracle_rel_err:.2e} "
           f"{elapsed:.1f}s")


def test_2b_equiv_cli_verdict(report, capsys):
    code = main(["equiv"])
    v = json.loads(capsys.readouterr().out)
    report("2b equiv command", code == 0 and v["verdict"] == "identical", json.dumps(v))


def _random_counts(rng, p):
    b = p * rng.choice([1, 2, 4, 8, 16, 32, 64])
    owners = [rng.randrange(p) for _ in range(b)]
    counts = [0] * p
    for o in owners:
        counts[o] += 1
    return counts


def test_3_algorithm_properties(report):
    rng = random.Random(2024)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(10_000):
        iv = ImbalanceVector.from_counts(_random_counts(rng, rng.randint(1, 64)))
        sched = balance(iv)
        final = sched.apply(iv.counts)
        if (final != list(iv.targets) or any(m.count < 1 or m.sender == m.receiver for m in sched)
                or len(sched) > iv.p - 1):
            bad += 1
    worst = 0.0
    over = 0
    for _ in range(1_000):
        iv = ImbalanceVector.from_counts(_random_counts(rng, rng.randint(1, 8)))
        got, opt = len(balance(iv)), optimal_message_count(iv)
        if got > 2 * opt:
            over += 1
        if opt:
            worst = max(worst, got / opt)
    elapsed = time.perf_counter() - t0
    report("3 balance schedule properties", bad == 0 and over == 0 and elapsed < 60,
           f"invalid={bad}/10000 over-2x={over}/1000 worst_ratio={worst:.2f} {elapsed:.1f}s")


def test_4_model_properties(report):
    tol = 1e-12
    fails = []
    for d, v, r in itertools.product([1e3, 1.28e6, 7e7], [10.0, 333.0, 2000.0], [800.0, 5e4]):
        crossover = r / v
        costs = []
        for p in range(1, 300):
            m = ModelParams(d=d, p=p, v=v, r=r)
            costs.append(model.true_cost(m))
            if p > crossover and abs(costs[-1] - d / r) > tol * d / r:
                fails.append(("plateau", d, v, r, p))
        if any(b > a * (1 + tol) for a, b in zip(costs, costs[1:])):
            fails.append(("monotone", d, v, r))
        # the two branches meet at p = r / v
        left = d / (crossover * v)
        if abs(left - d / r) > tol * d / r:
            fails.append(("continuity", d, v, r))
        if crossover == int(crossover):
            if abs(model.true_cost(ModelParams(d=d, p=int(crossover), v=v, r=r)) - d / r) > tol * d / r:
                fails.append(("continuity-int", d, v, r))
    for p, alpha, rc, bt in itertools.product([1, 2, 3, 8, 64, 1024], [0.0, 0.3, 1.0],
                                              [900.0, 1e5], [0.0, 0.03, 0.5, 0.9]):
        m = ModelParams(d=1.28e6, p=p, v=100.0, r=800.0, r_c=rc, r_b=rc, alpha=alpha, beta=bt)
        if bt <= (p - 1) / p and model.io_time_locality(m) > model.io_time_distcache(m) * (1 + tol):
            fails.append(("dominance", p, alpha, rc, bt))
        if alpha == 0:
            reg = model.io_time_regular(m)
            for fn in (model.io_time_distcache, model.io_time_locality):
                if abs(fn(m) - reg) > tol * reg:
                    fails.append(("alpha0", fn.__name__, p))
    report("4 cost model properties", not fails, f"{len(fails)} violations {fails[:3]}")


def test_5_worked_example(report):
    iv = ImbalanceVector((2, 6, 4), (4, 4, 4))
    sched = balance(iv)
    b = beta(iv)
    ok = len(sched) == 1 and tuple(sched.moves[0]) == (1, 0, 2) and abs(b - 0.167) <= 0.01
    report("5 worked example", ok, f"moves={list(map(tuple, sched))} beta={b:.4f}")


SLEEP = Preprocess("sleep", 1000)


def _epoch_time(spec, w, t, f=8):
    cfg = LoaderConfig(workers=w, intra_batch_parallelism=t, prefetch_depth=f, batch_size=64,
                       preprocess=SLEEP)
    return run_epoch(spec, cfg, seed=0, epoch=0).wall_time_s


def test_6_pipeline_laws(report, timing_dataset):
    spec = timing_dataset
    n = spec.n
    serial, quarter = n * 1e-3, n / 4 * 1e-3
    t11 = _epoch_time(spec, 1, 1)
    t14 = _epoch_time(spec, 1, 4)
    t41 = _epoch_time(spec, 4, 1)
    ok_time = (abs(t11 / serial - 1) <= 0.20 and abs(t14 / quarter - 1) <= 0.25
               and abs(t41 / quarter - 1) <= 0.25)

    order_bad = []
    expected = {}
    for w, t, f in itertools.product([1, 2, 4, 8], repeat=3):
        cfg = LoaderConfig(workers=w, intra_batch_parallelism=t, prefetch_depth=f, batch_size=64)
        seed = 10 + w + t + f
        if seed not in expected:
            expected[seed] = [tuple(b.samples.tolist())
                              for b in batches(permute_epoch(seed, 0, n), 64)]
        if run_epoch(spec, cfg, seed=seed, epoch=0).batch_order != expected[seed]:
            order_bad.append((w, t, f))

    cold, warm = warm_cache_epoch(spec, LoaderConfig(workers=2, batch_size=64, cache_capacity=n))
    ok = ok_time and not order_bad and warm.cache_misses == 0 and warm.cache_hits == n
    report("6 pipeline concurrency laws", ok,
           f"W1T1={t11:.3f}s (want {serial:.3f}+-20%) W1T4={t14:.3f}s W4T1={t41:.3f}s "
           f"(want {quarter:.3f}+-25%) order_mismatch={order_bad} warm_misses={warm.cache_misses}")


def test_7_balls_in_bins(report):
    p = 64
    b = round(p * math.log(p) ** 2)
    c = balls_in_bins_check(b, p, 1.5, 10_000, seed=0)
    report("7 balls-in-bins tail", c.empirical_exceed_rate < 0.05,
           f"b={b} K={c.k_alpha:.2f} mean_max={c.mean_max_load:.2f} "
           f"Pr[M>K]={c.empirical_exceed_rate:.4f}")
