"""Command-line entry point: ``clrun run|sweep|report|selftest``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .harness import ConfigError, ReportError, load_config, report, run, sweep
from .streams import DataError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4


def _csv(cast):
    def parse(text: str):
        try:
            return [cast(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clrun", description="Continual-learning experiments with La-MAML and its ablations.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and evaluate one config over its seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="run only this seed")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--data-dir", help="directory holding the MNIST IDX files")

    p = sub.add_parser("sweep", help="vary one hyperparameter, everything else fixed")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True, choices=["alpha0", "beta", "eta", "glances"])
    p.add_argument("--values", required=True, type=_csv(float))
    p.add_argument("--seeds", type=_csv(int))
    p.add_argument("--out")
    p.add_argument("--data-dir")

    p = sub.add_parser("report", help="tables and figures from a directory of run records")
    p.add_argument("--dir", required=True)
    p.add_argument("--out", help="where to write the report (defaults to --dir)")

    p = sub.add_parser("selftest", help="gradient, reservoir and metric checks")
    p.add_argument("--only", type=_csv(str), help="subset of: gradients, alpha, metrics, reservoir")
    return parser


def _load(args):
    config = load_config(args.config)
    overrides = {}
    if getattr(args, "data_dir", None):
        overrides["data_dir"] = args.data_dir
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    return config.replace(**overrides) if overrides else config


def cmd_run(args) -> int:
    config = _load(args)
    seeds = [args.seed] if args.seed is not None else config.seeds
    records = []
    for seed in seeds:
        record = run(config, seed, config.output_dir)
        records.append(record)
        status = "DIVERGED" if record.diverged else f"RA {record.ra:.2f}  BTI {record.bti:.2f}"
        print(f"{config.benchmark}/{config.variant} seed {seed}: {status}  ({record.timing['total_seconds']:.1f}s)")
    return EXIT_DIVERGED if records and all(r.diverged for r in records) else EXIT_OK


def cmd_sweep(args) -> int:
    config = _load(args)
    result = sweep(config, args.axis, args.values, args.seeds, config.output_dir)
    for row in result.summary:
        print(f"{args.axis}={row['axis_value']:g}: RA {row['RA_mean']:.2f} ± {row['RA_std']:.2f}  diverged {row['n_diverged']}")
    print(f"RA spread (max - min): {result.ra_spread:.2f}")
    print(f"series: {result.series_path}\nsummary: {result.summary_path}")
    if result.figure_path:
        print(f"figure: {result.figure_path}")
    if all(r["diverged"] for r in result.rows):
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_report(args) -> int:
    for kind, path in report(args.dir, args.out).items():
        print(f"{kind}: {path}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import CHECKS

    failed = 0
    for name in args.only or list(CHECKS):
        if name not in CHECKS:
            raise ConfigError(f"unknown check {name!r}")
        t0 = time.perf_counter()
        title, ok, detail = CHECKS[name]()
        failed += not ok
        print(f"[{'PASS' if ok else 'FAIL'}] {title}: {detail} ({time.perf_counter() - t0:.1f}s)")
    return EXIT_FAIL if failed else EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "report": cmd_report, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ReportError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
