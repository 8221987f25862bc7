"""Command line entry point: ``symradio <experiment> [--config F] [--out D] [--seed S] [--trials N] [--svg]``."""

from __future__ import annotations

import argparse
import sys

from .harness import EXPERIMENTS, ConfigError, ExperimentConfig, config_from_mapping, load_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="symradio", description="Energy-minimizing allocation experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="INI file with an [experiment] section")
    p.add_argument("--out", help="output directory (default: results)")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--trials", type=int, help="number of trials")
    p.add_argument("--svg", action="store_true", help="also write an SVG line plot")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"experiment": args.experiment, "out_dir": args.out, "seed": args.seed, "trials": args.trials}
    if args.svg:
        overrides["svg"] = "true"
    try:
        if args.config:
            cfg = load_config(args.config, **overrides)
        else:
            cfg = config_from_mapping({k: v for k, v in overrides.items() if v is not None})
    except (ConfigError, OSError, ValueError) as exc:
        print(f"symradio: {exc}", file=sys.stderr)
        return 1
    try:
        result = run_experiment(cfg)
    except OSError as exc:
        print(f"symradio: {exc}", file=sys.stderr)
        return 1
    for path in result.files:
        print(path)
    if result.exit_code:
        print("symradio: some trials did not converge (rows were still written)", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
