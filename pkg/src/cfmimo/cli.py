"""Command line interface: run sweeps, validate configs, run the oracle suite.

Exit codes: 0 success, 2 configuration error, 3 numerical-failure cells (or
failed oracle checks) present.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_experiment_config
from .experiment import emit_results, run_experiment, run_oracle_suite


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfmimo",
        description="Monte Carlo spectral-efficiency simulator for cell-free massive MIMO beamforming",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a sweep and write result files")
    run_p.add_argument("--config", default=None, help="config file (key = value lines)")
    run_p.add_argument("--profile", default="desk", choices=("desk", "paper"))
    run_p.add_argument("--out", default=None, help="output directory (default ./results)")
    run_p.add_argument("--threads", type=int, default=1)

    val_p = sub.add_parser("validate", help="check a config file and exit")
    val_p.add_argument("--config", default=None)
    val_p.add_argument("--profile", default="desk", choices=("desk", "paper"))

    orc_p = sub.add_parser("oracle", help="run the Monte Carlo oracle suite")
    orc_p.add_argument("--blocks", type=int, default=20000, help="blocks for the Gram oracle")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            load_experiment_config(args.config, profile=args.profile)
            print("config ok")
            return 0
        if args.command == "run":
            exp = load_experiment_config(args.config, profile=args.profile)
            out_dir = args.out or exp.out_dir or "results"
            records = run_experiment(exp, threads=max(1, args.threads))
            paths = emit_results(records, out_dir)
            n_failed = sum(1 for r in records if "cell-failed" in r.flags)
            for name, path in paths.items():
                print(f"{name}: {path}")
            if n_failed:
                print(f"{n_failed} cell(s) failed; see flags column", file=sys.stderr)
                return 3
            return 0
        if args.command == "oracle":
            checks = run_oracle_suite(gram_blocks=args.blocks)
            all_ok = True
            for check in checks:
                status = "PASS" if check.passed else "FAIL"
                print(f"[{status}] {check.name}: {check.detail}")
                all_ok &= check.passed
            return 0 if all_ok else 3
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
