"""Command line: ``kalnat run | sweep | verify | bench``."""

import argparse
import logging
import os
import sys

from .errors import CheckpointFormatError, ConfigError, InvalidArgumentError
from .harness.config import FIELD_TYPES, coerce, load_config

log = logging.getLogger("kalnat")


def _add_config_flags(parser):
    parser.add_argument("--config", help="key = value config file")
    group = parser.add_argument_group("config overrides (same names as the config file keys)")
    for name in FIELD_TYPES:
        group.add_argument(f"--{name}", dest=name, default=None, metavar="VALUE")


def _config_from_args(args):
    overrides = {k: coerce(k, getattr(args, k)) for k in FIELD_TYPES if getattr(args, k) is not None}
    return load_config(args.config, **overrides)


def _parse_vary(items):
    """``["alpha=0,0.1", "beta=0.9,0.98"]`` -> ``{"alpha": [0.0, 0.1], ...}``."""
    grid = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--vary expects key=v1,v2,..., got {item!r}")
        key, values = item.split("=", 1)
        key = key.strip()
        if key in grid:
            raise ConfigError(f"--vary given twice for {key!r}", field=key)
        grid[key] = [coerce(key, v) for v in values.split(",") if v.strip()]
        if not grid[key]:
            raise ConfigError(f"--vary {key} has no values", field=key)
    return grid


def cmd_run(args):
    from .harness.experiment import run_experiment

    config = _config_from_args(args)
    result = run_experiment(
        config,
        args.out,
        resume=args.resume,
        max_steps=args.max_steps,
        checkpoint_path=args.checkpoint,
    )
    print(f"steps={result.steps} final_accuracy={result.final_accuracy:.4f} "
          f"diverged={str(result.diverged).lower()} wall_ms={result.wall_ms:.0f}")
    if args.out:
        print(f"wrote {os.path.join(args.out, 'metrics.csv')} and summary.txt")
    return 1 if result.diverged else 0


def cmd_sweep(args):
    from .harness.experiment import sweep, sweep_csv, sweep_table

    config = _config_from_args(args)
    grid = _parse_vary(args.vary)
    seeds = [int(s) for s in args.seeds.split(",")]
    cells = sweep(config, grid, seeds)
    keys = list(grid)
    print(sweep_table(cells, keys[0], keys[1] if len(keys) > 1 else None))
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            fh.write(sweep_csv(cells))
        print(f"wrote {args.out}")
    return 0


def cmd_verify(args):
    from .ngd import verify_suite

    samples = tuple(int(float(s)) for s in args.fisher_samples.split(",") if s.strip())
    report = verify_suite(args.instances, args.seed, samples)
    print(report.format())
    tol_emp = {100_000: 0.05, 1_000_000: 0.02}
    ok = report.passed(tol_empirical=tol_emp)
    print("verify: PASS" if ok else "verify: FAIL")
    return 0 if ok else 1


def cmd_bench(args):
    from . import _backend
    from .bench import bench_backends, bench_kernels, format_report

    ns = tuple(int(float(s)) for s in args.sizes.split(","))
    rows = bench_backends(ns, args.m, args.repeats, full_max_n=args.full_max_n)
    kernels = None if args.skip_kernels else bench_kernels(args.kernel_repeats)
    print(f"# kernels in use: {_backend.active()}")
    print(format_report(rows, kernels))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="kalnat", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one configuration")
    _add_config_flags(p)
    p.add_argument("--out", help="directory for metrics.csv and summary.txt")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--checkpoint", help="write the final optimizer state here")
    p.add_argument("--max-steps", type=int, default=None, help="stop after this many steps")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid of runs, median over seeds")
    _add_config_flags(p)
    p.add_argument("--vary", action="append", required=True, metavar="KEY=V1,V2",
                   help="swept key and values; repeat for a cross product")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--out", help="CSV file for the per-cell results")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="check the natural-gradient identities numerically")
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fisher-samples", default="100000",
                   help="comma-separated Monte-Carlo sample counts for the empirical Fisher")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time Full vs Diagonal steps and the compiled kernels")
    p.add_argument("--sizes", default="100,1000,10000")
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--full-max-n", type=int, default=None,
                   help="skip Full steps above this n (n=1e4 needs about 2.4 GB)")
    p.add_argument("--kernel-repeats", type=int, default=50)
    p.add_argument("--skip-kernels", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointFormatError, InvalidArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
