"""Command-line experiment runner: ``facrpca {run,validate,report}``."""

import argparse
import sys

from .experiments import ConfigError, report, run_experiment, validate_config
from .solver import SolverError


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="facrpca",
        description="Config-driven robust-PCA factorization experiments.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run all trials of a config/manifest")
    p_run.add_argument("--config", required=True,
                       help="TOML config or manifest.json of a previous run")
    p_run.add_argument("--out", default=None,
                       help="output directory (overrides run.out_dir)")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override run.seed_base")
    p_run.add_argument("--trials-parallel", action="store_true",
                       help="run trials in parallel processes")

    p_val = sub.add_parser("validate",
                           help="resolve and check a config without running")
    p_val.add_argument("--config", required=True)

    p_rep = sub.add_parser("report",
                           help="re-aggregate summary files from trial results")
    p_rep.add_argument("--out", required=True, help="run output directory")

    args = parser.parse_args(argv)
    try:
        if args.verb == "run":
            out_dir = run_experiment(args.config, out=args.out, seed=args.seed,
                                     trials_parallel=args.trials_parallel)
            print(f"results written to {out_dir}")
            return 0
        if args.verb == "validate":
            return validate_config(args.config)
        out_dir = report(args.out)
        print(f"summary rebuilt under {out_dir}")
        return 0
    except (ConfigError, FileNotFoundError, ValueError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
