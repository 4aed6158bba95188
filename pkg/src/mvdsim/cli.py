"""Command-line experiment driver.

    mvdsim --config experiment.toml [--seed N] [--jobs N]
           [--output DIR] [--format {csv,json}]

The default output root is $MVDSIM_OUTPUT_ROOT (or ./mvdsim-out); each
run writes into <root>/<experiment name>.  Exit codes: 0 definite
results, 1 errors or engine disagreement, 2 Unknown verdicts.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .experiments import run


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mvdsim",
        description="Measure-valued branching diffusion experiments")
    ap.add_argument("--config", required=True, help="TOML or JSON config")
    ap.add_argument("--seed", type=int, default=None,
                    help="override the config seed")
    ap.add_argument("--jobs", type=int, default=None,
                    help="parallel workers for bundle experiments")
    ap.add_argument("--output", default=None, help="output directory")
    ap.add_argument("--format", choices=("csv", "json"), default="csv",
                    dest="fmt", help="results file format")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        output = args.output
        if output is None:
            root = os.environ.get("MVDSIM_OUTPUT_ROOT", "mvdsim-out")
            name = config.get("experiment", "run") if isinstance(config, dict) \
                else "run"
            output = str(Path(root) / str(name))
        result = run(config, output_dir=output, seed=args.seed,
                     fmt=args.fmt, jobs=args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    outputs = result.outputs.get("outputs", {})
    for key in ("status", "verdict", "extinction_frequency", "K_times_s_K",
                "probability", "disagreements", "mc_mean", "explosive"):
        if key in outputs:
            print(f"{key}: {outputs[key]}")
    if result.summary_path is not None:
        print(f"wrote {result.summary_path}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
