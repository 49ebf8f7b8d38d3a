"""Command-line entry point: fit, screen-only, simulate, replicate-table.

Exit codes are a stable contract: 0 success, 2 configuration error, 3 data
error, 4 numeric failure. Configuration files are JSON; command-line flags
override file values.
"""

import argparse
import json
import os
import sys

import numpy as np

from .data import write_long_csv
from .exceptions import ConfigError, DataError, NumericError
from .pipeline import (WORKERS_ENV_VAR, load_config, replicate_table,
                       replicate_table_from_manifest, run_pipeline,
                       run_screen_only)
from .simulate import CASE_IDS, gen_case, make_case


def _fit_overrides(args):
    """Dotted-path config overrides collected from command-line flags."""
    over = {}
    if args.output_dir is not None:
        over["output_dir"] = args.output_dir
    if args.seed is not None:
        over["seed"] = args.seed
    if args.workers is not None:
        over["workers"] = args.workers
    if getattr(args, "refine", None) is not None:
        over["refine.enabled"] = args.refine
    if getattr(args, "iterate", None) is not None:
        over["refine.iterate"] = args.iterate
    if getattr(args, "bootstrap", None) is not None:
        over["refine.bootstrap"] = args.bootstrap
    for name in ("h1", "h2", "h3"):
        value = getattr(args, name, None)
        if value is not None:
            over[f"bandwidths.{name}"] = value
    return over


def _add_config_flags(sub):
    sub.add_argument("config", help="JSON configuration file")
    sub.add_argument("--output-dir", metavar="DIR",
                     help="artifact directory (overrides the config)")
    sub.add_argument("--seed", type=int, help="master seed (overrides the config)")
    sub.add_argument("--workers", type=int, metavar="K",
                     help=f"parallelism degree (default ${WORKERS_ENV_VAR} or 1)")


def _cmd_fit(args):
    config = load_config(args.config, _fit_overrides(args))
    report = run_pipeline(config)
    for st in report.stages:
        print(f"  {st['name']:<10} {st['seconds']:.2f}s")
    print(f"artifacts in {config.output_dir} (manifest.json has chosen "
          "tuning values and seeds)")
    return 0


def _cmd_screen_only(args):
    config = load_config(args.config, _fit_overrides(args))
    report = run_screen_only(config)
    print(f"screening ranks written to {report.outputs['screening']}")
    return 0


def _cmd_simulate(args):
    spec = make_case(args.case, n=args.n, m=args.m, p=args.p, rho=args.rho,
                     s0=args.s0)
    rng = np.random.default_rng(np.random.SeedSequence((int(args.seed), 0)))
    dataset, truth = gen_case(spec, rng)
    os.makedirs(args.out, exist_ok=True)
    data_path = os.path.join(args.out, "dataset.csv")
    write_long_csv(dataset, data_path)
    record = {
        "case": args.case, "n": args.n, "m": args.m, "p": args.p,
        "rho": args.rho, "s0": args.s0, "seed": args.seed,
        "constant": {dataset.names[k]: truth.constant_values[pos]
                     for pos, k in enumerate(truth.constant)},
        "varying": [dataset.names[k] for k in truth.varying],
        "spurious": [dataset.names[k] for k in truth.spurious],
    }
    truth_path = os.path.join(args.out, "truth.json")
    with open(truth_path, "w") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")
    print(f"wrote {data_path} and {truth_path}")
    return 0


def _cmd_replicate_table(args):
    if args.from_manifest is not None:
        header, rows, manifest = replicate_table_from_manifest(
            args.from_manifest, out_dir=args.out, workers=args.workers)
    else:
        if args.reps is None:
            raise ConfigError("--reps is required unless --from-manifest is given")
        if args.table == 1 and args.variant:
            raise ConfigError("--variant applies to table 2 only")
        cases = tuple(args.cases.split(",")) if args.cases else None
        variants = tuple(args.variant) if args.variant else ("oracle", "practical")
        header, rows, manifest = replicate_table(
            args.table, args.reps, args.seed, cases=cases, variants=variants,
            out_dir=args.out, workers=args.workers)
    for note in manifest.get("notes", ()):
        print(f"note: {note}", file=sys.stderr)
    print(f"wrote {manifest['outputs']['table']} "
          f"({len(rows)} rows, reference values alongside)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="longvc",
        description="Screening, structure selection, and refined estimation "
                    "for longitudinal varying-coefficient models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="run the full pipeline from a config file")
    _add_config_flags(fit)
    refine = fit.add_mutually_exclusive_group()
    refine.add_argument("--refine", dest="refine", action="store_true",
                        default=None, help="force the refinement stage on")
    refine.add_argument("--no-refine", dest="refine", action="store_false",
                        default=None, help="stop after the initial fit")
    fit.add_argument("--iterate", type=int, metavar="K",
                     help="refit/re-estimate covariance up to K passes")
    fit.add_argument("--bootstrap", type=int, metavar="B",
                     help="bootstrap replicates for curve confidence bands")
    for name in ("h1", "h2", "h3"):
        fit.add_argument(f"--{name}", type=float, metavar="H",
                         help=f"fix bandwidth {name} instead of cross-validating")
    fit.set_defaults(func=_cmd_fit)

    screen = sub.add_parser("screen-only",
                            help="rank covariates and stop before selection")
    _add_config_flags(screen)
    screen.set_defaults(func=_cmd_screen_only)

    sim = sub.add_parser("simulate",
                         help="write one simulated dataset and its truth record")
    sim.add_argument("case", choices=CASE_IDS, help="simulation case id")
    sim.add_argument("--n", type=int, default=100, help="subjects (default 100)")
    sim.add_argument("--m", type=int, default=20,
                     help="observations per subject (default 20)")
    sim.add_argument("--p", type=int, default=500, help="covariates (default 500)")
    sim.add_argument("--rho", type=float, default=0.1,
                     help="cross-covariate correlation (default 0.1)")
    sim.add_argument("--s0", type=int, default=10,
                     help="spurious correlated covariates (default 10)")
    sim.add_argument("--seed", type=int, default=0, help="seed (default 0)")
    sim.add_argument("--out", default="longvc-sim", metavar="DIR",
                     help="output directory (default longvc-sim)")
    sim.set_defaults(func=_cmd_simulate)

    table = sub.add_parser("replicate-table",
                           help="recompute a benchmark summary table")
    table.add_argument("table", type=int, choices=(1, 2),
                       help="1 selection metrics, 2 estimation metrics")
    table.add_argument("--reps", type=int, help="replications per column")
    table.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    table.add_argument("--cases", metavar="I,II,...",
                       help="comma-separated case subset (default all)")
    table.add_argument("--variant", action="append",
                       choices=("oracle", "practical"),
                       help="table 2 structure source; repeatable (default both)")
    table.add_argument("--out", default="longvc-tables", metavar="DIR",
                       help="output directory (default longvc-tables)")
    table.add_argument("--workers", type=int, metavar="K",
                       help=f"parallelism degree (default ${WORKERS_ENV_VAR} or 1)")
    table.add_argument("--from-manifest", metavar="PATH",
                       help="re-run a previous request exactly as recorded")
    table.set_defaults(func=_cmd_replicate_table)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
