"""Command line: ``mimo-lab run | selftest | plot``."""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import (
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_SELFTEST,
    ConfigError,
    ExperimentConfig,
    emit_plot,
    run_experiment,
    run_selftest,
    write_results,
)

log = logging.getLogger("mimo_lab")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mimo-lab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--experiment")
    run.add_argument("--snr-db", help="value or start:stop:step")
    run.add_argument("--rho", help="value or start:stop:step")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--no-plot", action="store_true")

    sub.add_parser("selftest", help="run the fast invariant suite")

    plot = sub.add_parser("plot", help="render an SVG from a result CSV")
    plot.add_argument("csv")
    plot.add_argument("--style", choices=("ber", "entropy"))
    return p


def _load_config(args) -> ExperimentConfig:
    data = vars(ExperimentConfig.from_file(args.config)).copy()
    overrides = {"experiment": args.experiment, "snr_db": args.snr_db, "rho": args.rho,
                 "trials": args.trials, "seed": args.seed, "output_dir": args.out}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def cmd_run(args) -> int:
    try:
        cfg = _load_config(args)
    except (ConfigError, OSError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.experiment == "SelfTest":
        return cmd_selftest(args)
    rows = run_experiment(cfg)
    csv_path, meta_path = write_results(cfg, rows, cfg.output_dir)
    print(f"wrote {csv_path} and {meta_path}")
    if not args.no_plot and any(not r.failed for r in rows):
        svg, script = emit_plot(csv_path)
        print(f"wrote {svg} and {script}")
    failed = [r for r in rows if r.failed]
    for r in failed:
        print(f"failed: x={r.x} method={r.method}: {r.meta.get('error')}", file=sys.stderr)
    return EXIT_NUMERICAL if failed else EXIT_OK


def cmd_selftest(args) -> int:
    results = run_selftest()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_SELFTEST


def cmd_plot(args) -> int:
    try:
        svg, script = emit_plot(args.csv, style=args.style)
    except (OSError, ValueError) as exc:
        print(f"plot error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {svg} and {script}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "selftest": cmd_selftest, "plot": cmd_plot}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
