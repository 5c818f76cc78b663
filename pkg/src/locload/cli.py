"""Command-line front end.

Every subcommand accepts ``--config FILE`` (flat ``key = value`` lines, ``#``
comments) whose keys are the long option names with dashes or underscores;
explicit flags override the file. CSV outputs start with a ``# config:`` line
holding the effective configuration as JSON.

Exit codes: 0 success, 2 usage error, 3 failed check.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

from . import __version__, model
from .balance import ImbalanceVector, balance
from .equivalence import check_equivalence
from .errors import LocloadError
from .pipeline import DatasetSpec, LoaderConfig, Preprocess, generate_dataset, run_epoch, warm_cache_epoch
from .simulate import SWEEP_LOCAL_BATCH, SWEEP_P, DEFAULT_D, imbalance_sweep, simulate_epoch_costs

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 2, 3

# reported medians of the balancing fraction per local batch size
REFERENCE_MEDIANS = {32: 0.069, 64: 0.048, 128: 0.034}
MEDIAN_TOL = 0.01


class UsageError(Exception):
    pass


def int_list(text: str) -> list[int]:
    """``"1,2,8"`` or ranges ``"1-256"``; ``"pow2:256"`` gives 1,2,4,...,256."""
    out: list[int] = []
    try:
        for part in str(text).split(","):
            part = part.strip()
            if not part:
                continue
            if part.startswith("pow2:"):
                hi = int(part[5:])
                k = 1
                while k <= hi:
                    out.append(k)
                    k *= 2
            elif "-" in part[1:]:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def str_list(text: str) -> list[str]:
    return [s.strip() for s in str(text).split(",") if s.strip()]


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_config(path) -> dict[str, str]:
    cfg = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{n}: expected key = value")
        cfg[key.strip().replace("-", "_")] = val.strip()
    return cfg


def _apply_config(sub: argparse.ArgumentParser, cfg: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, val in cfg.items():
        a = actions.get(key)
        if a is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(a, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = _bool(val)
        elif a.type is not None:
            try:
                defaults[key] = a.type(val)
            except (argparse.ArgumentTypeError, ValueError) as e:
                raise UsageError(f"config key {key}: {e}") from None
        else:
            defaults[key] = val
    sub.set_defaults(**defaults)


def effective_config(args) -> dict:
    skip = {"func", "config", "save_config", "command", "out"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _format_cfg_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v).lower() if isinstance(v, bool) else str(v)


def save_config(args, path) -> None:
    lines = [f"{k} = {_format_cfg_value(v)}" for k, v in effective_config(args).items()
             if v is not None and k != "counts_file"]
    Path(path).write_text("\n".join(lines) + "\n")


class Output:
    """stdout or ``--out`` file; CSV writer with a provenance comment."""

    def __init__(self, args):
        self.args = args
        self.buf = io.StringIO()

    def csv(self, header, rows):
        self.buf.write(f"# config: {json.dumps(effective_config(self.args), sort_keys=True)}\n")
        w = csv.writer(self.buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)

    def line(self, text):
        self.buf.write(text + "\n")

    def flush(self):
        data = self.buf.getvalue()
        if self.args.out:
            Path(self.args.out).write_text(data)
        else:
            sys.stdout.write(data)
            sys.stdout.flush()


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def _params(args, p=1) -> model.ModelParams:
    return model.ModelParams(d=args.d, p=p, v=args.v, r=args.r, r_c=args.r_c, r_b=args.r_b,
                             u=args.u, alpha=args.alpha, beta=args.beta)


# -- subcommands -------------------------------------------------------------

def cmd_model(args, out: Output) -> int:
    rows = []
    for scheme in args.schemes:
        if scheme not in model.SCHEMES:
            raise UsageError(f"unknown scheme {scheme!r}")
        for p in args.p_list:
            mp = _params(args, p)
            cb = model.cost_breakdown(mp, scheme)
            rows.append([p, scheme] + [_fmt(x) for x in (
                cb.training_s, cb.sample_io_s, cb.preprocessing_s, cb.data_loading_s,
                max(cb.training_s, cb.sample_io_s), cb.true_cost_s)])
    out.csv(["p", "scheme", "training_s", "io_s", "preprocess_s", "data_loading_s",
             "true_cost_s", "true_cost_ext_s"], rows)
    return EXIT_OK


def cmd_imbalance(args, out: Output) -> int:
    stats = imbalance_sweep(args.p_list, args.local_batch, args.d, args.steps, args.seed)
    rows = []
    for s in stats:
        if not args.summary_only:
            rows.extend(["raw", s.p, s.local_batch, t, _fmt(b), "", "", "", "", "", ""]
                        for t, b in enumerate(s.betas.tolist()))
        m = s.summary
        rows.append(["summary", s.p, s.local_batch, "", "", _fmt(m.median), _fmt(m.q1),
                     _fmt(m.q3), _fmt(m.whisker_lo), _fmt(m.whisker_hi), _fmt(m.mean)])
    out.csv(["kind", "p", "local_batch", "step", "beta", "median", "q1", "q3",
             "whisker_lo", "whisker_hi", "mean"], rows)
    if not args.check:
        return EXIT_OK
    ok = True
    for lb in args.local_batch:
        meds = [s.summary.median for s in stats if s.local_batch == lb]
        spread = max(meds) - min(meds)
        ref = REFERENCE_MEDIANS.get(lb)
        good = spread <= MEDIAN_TOL and (ref is None or all(abs(m - ref) <= MEDIAN_TOL for m in meds))
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} local_batch={lb} medians="
              f"{[round(m, 4) for m in meds]} expected={ref} spread={spread:.4f}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_CHECK


def _read_instances(path):
    text = sys.stdin.read() if path == "-" else Path(path).read_text()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            yield [int(x) for x in line.replace(",", " ").split()]
        except ValueError:
            raise UsageError(f"line {n}: counts must be integers") from None


def cmd_balance(args, out: Output) -> int:
    failures = 0
    for k, counts in enumerate(_read_instances(args.counts_file)):
        try:
            iv = ImbalanceVector.from_counts(counts)
        except LocloadError as e:
            raise UsageError(f"instance {k}: {e}") from None
        sched = balance(iv)
        if args.check:
            try:
                sched.check(iv)
            except AssertionError as e:
                failures += 1
                print(f"FAIL instance {k}: {e}", file=sys.stderr)
        for mv in sched:
            out.line(json.dumps({"instance": k, "sender": mv.sender,
                                 "receiver": mv.receiver, "count": mv.count}))
    if args.check:
        print(f"{'PASS' if not failures else 'FAIL'} schedules checked, {failures} failures",
              file=sys.stderr)
    return EXIT_CHECK if failures else EXIT_OK


def predicted_epoch_s(n_batches, batch_size, workers, threads, delay_s) -> float:
    """Epoch time implied by injected per-sample delay alone."""
    return math.ceil(n_batches / workers) * math.ceil(batch_size / threads) * delay_s


def cmd_bench(args, out: Output) -> int:
    spec = DatasetSpec(args.root, args.n, args.sample_bytes)
    if args.generate:
        generate_dataset(spec, args.seed)
    spec.validate()
    pre = Preprocess.parse(args.preprocess)
    failures = 0
    for w in args.workers:
        for t in args.threads:
            cfg = LoaderConfig(w, t, args.prefetch, args.batch_size, pre, args.cache)
            base = {"workers": w, "threads": t, "prefetch": args.prefetch,
                    "batch_size": args.batch_size, "preprocess": str(pre), "cache": args.cache}
            if args.cache is not None:
                cold, warm = warm_cache_epoch(spec, cfg, args.seed, args.epoch)
                reports = [("cold", cold), ("warm", warm)]
            else:
                reports = [("epoch", run_epoch(spec, cfg, args.seed, args.epoch))]
            pred = None
            if pre.kind == "sleep":
                pred = predicted_epoch_s(spec.n // args.batch_size, args.batch_size, w, t,
                                         pre.micros / 1e6)
            for phase, rep in reports:
                rec = dict(base, phase=phase, **rep.as_dict())
                if pred is not None:
                    rec["predicted_s"] = pred
                    rec["ratio"] = rep.wall_time_s / pred
                    if args.check and abs(rec["ratio"] - 1) > args.tolerance:
                        failures += 1
                        print(f"FAIL W={w} T={t} {phase}: {rep.wall_time_s:.3f}s vs "
                              f"predicted {pred:.3f}s", file=sys.stderr)
                out.line(json.dumps(rec, sort_keys=True))
    return EXIT_CHECK if failures else EXIT_OK


def cmd_equiv(args, out: Output) -> int:
    v = check_equivalence(args.p_list, args.batch_sizes, range(args.seed, args.seed + args.seeds),
                          args.steps, args.d, args.lr, canonical=not args.non_canonical)
    if args.non_canonical:
        verdict = "identical" if v.identical else "tolerance"
        ok = v.max_abs_diff <= args.tolerance
    else:
        verdict = "identical" if v.identical else "different"
        ok = v.identical
    ok = ok and v.max_oracle_rel_err <= args.oracle_tolerance
    out.line(json.dumps({"verdict": verdict, "ok": ok, "max_abs_diff": v.max_abs_diff,
                         "max_oracle_rel_err": v.max_oracle_rel_err, "runs": v.runs}))
    return EXIT_OK if ok else EXIT_CHECK


def cmd_gen_data(args, out: Output) -> int:
    spec = generate_dataset(DatasetSpec(args.root, args.n, args.sample_bytes), args.seed)
    out.line(json.dumps({"root": str(spec.root), "n": spec.n, "sample_bytes": spec.sample_bytes,
                         "total_bytes": spec.n * spec.sample_bytes}))
    return EXIT_OK


def cmd_simulate(args, out: Output) -> int:
    mp = _params(args)
    rows = []
    for scheme in args.schemes:
        if scheme not in model.SCHEMES:
            raise UsageError(f"unknown scheme {scheme!r}")
        for r in simulate_epoch_costs(mp, args.p_list, scheme, args.epochs, args.seed,
                                      args.local_batch, args.imbalance_steps):
            rows.append([r.p, r.scheme, r.epoch] + [_fmt(x) for x in (
                r.beta, r.training_s, r.io_s, r.preprocess_s, r.data_loading_s,
                r.waiting_s, r.total_s)])
    out.csv(["p", "scheme", "epoch", "beta", "training_s", "io_s", "preprocess_s",
             "data_loading_s", "waiting_s", "total_s"], rows)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _model_flags(sp, default_p):
    dp = model.DEFAULT_PARAMS
    sp.add_argument("--d", type=float, default=dp.d, help="dataset size in samples")
    sp.add_argument("--p-list", type=int_list, default=default_p, help="node counts, e.g. 1-256")
    sp.add_argument("--v", type=float, default=dp.v, help="per-node training rate")
    sp.add_argument("--r", type=float, default=dp.r, help="storage I/O rate")
    sp.add_argument("--r-c", type=float, default=dp.r_c, help="remote cache I/O rate")
    sp.add_argument("--r-b", type=float, default=dp.r_b, help="load-balancing I/O rate")
    sp.add_argument("--u", type=float, default=dp.u, help="per-node preprocessing rate")
    sp.add_argument("--alpha", type=float, default=dp.alpha, help="cached fraction")
    sp.add_argument("--beta", type=float, default=dp.beta, help="balancing traffic fraction")
    sp.add_argument("--schemes", type=str_list, default=list(model.SCHEMES))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="output path (default stdout)")
    common.add_argument("--config", default=None, help="key = value config file")
    common.add_argument("--save-config", default=None, help="write effective config here")

    parser = argparse.ArgumentParser(prog="locload", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    sp = subs.add_parser("model", parents=[common], help="analytical epoch cost table (CSV)")
    _model_flags(sp, list(range(1, 257)))
    sp.set_defaults(func=cmd_model)

    sp = subs.add_parser("imbalance", parents=[common], help="batch imbalance simulation (CSV)")
    sp.add_argument("--p-list", type=int_list, default=list(SWEEP_P))
    sp.add_argument("--local-batch", type=int_list, default=list(SWEEP_LOCAL_BATCH))
    sp.add_argument("--d", type=int, default=DEFAULT_D)
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--summary-only", action="store_true")
    sp.add_argument("--check", action="store_true", help="compare medians with reference values")
    sp.set_defaults(func=cmd_imbalance)

    sp = subs.add_parser("balance", parents=[common], help="transfer schedules (JSON lines)")
    sp.add_argument("counts_file", help="one instance per line of per-learner counts; - for stdin")
    sp.add_argument("--check", action="store_true", help="verify every schedule")
    sp.set_defaults(func=cmd_balance)

    sp = subs.add_parser("bench", parents=[common], help="loader throughput grid (JSON lines)")
    sp.add_argument("--root", required=False, default="locload-data")
    sp.add_argument("--n", type=int, default=2048)
    sp.add_argument("--sample-bytes", type=int, default=1024)
    sp.add_argument("--generate", action="store_true", help="(re)generate the dataset first")
    sp.add_argument("--workers", type=int_list, default=[1])
    sp.add_argument("--threads", type=int_list, default=[1])
    sp.add_argument("--prefetch", type=int, default=8)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--preprocess", default="none", help="none | sleep:US | spin:US")
    sp.add_argument("--cache", type=int, default=None, help="memory cache capacity in samples")
    sp.add_argument("--epoch", type=int, default=0)
    sp.add_argument("--check", action="store_true", help="compare sleep runs with predictions")
    sp.add_argument("--tolerance", type=float, default=0.25)
    sp.set_defaults(func=cmd_bench)

    sp = subs.add_parser("equiv", parents=[common], help="regular vs locality-aware SGD")
    sp.add_argument("--p-list", type=int_list, default=[1, 2, 3, 4, 8])
    sp.add_argument("--batch-sizes", type=int_list, default=[12, 64])
    sp.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds")
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--d", type=int, default=960)
    sp.add_argument("--lr", type=float, default=0.05)
    sp.add_argument("--non-canonical", action="store_true",
                    help="sum per learner, then across learners")
    sp.add_argument("--tolerance", type=float, default=1e-9)
    sp.add_argument("--oracle-tolerance", type=float, default=1e-12)
    sp.set_defaults(func=cmd_equiv)

    sp = subs.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    sp.add_argument("--root", default="locload-data")
    sp.add_argument("--n", type=int, default=2048)
    sp.add_argument("--sample-bytes", type=int, default=1024)
    sp.set_defaults(func=cmd_gen_data)

    sp = subs.add_parser("simulate", parents=[common], help="epoch cost simulation (CSV)")
    _model_flags(sp, [1, 2, 4, 8, 16, 32, 64, 128, 256])
    sp.add_argument("--epochs", type=int, default=1)
    sp.add_argument("--local-batch", type=int, default=64)
    sp.add_argument("--imbalance-steps", type=int, default=200)
    sp.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.config:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            _apply_config(sub, read_config(args.config))
            args = parser.parse_args(argv)
        if args.save_config:
            save_config(args, args.save_config)
        out = Output(args)
        code = args.func(args, out)
        out.flush()
        return code
    except (UsageError, LocloadError, FileNotFoundError) as e:
        print(f"locload: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
