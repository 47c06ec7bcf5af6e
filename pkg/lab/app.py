"""
CylinderLab Application Entry Point
====================================
Run a solve, sweep, audit or onedim configuration from the command line.

Usage:
    python app.py sweep --config configs/quadratic_sweep.json --out runs/quadratic
    python app.py audit --config configs/audit_power2.json --seed 7
"""

import argparse
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv

load_dotenv(Path(__file__).parent / ".env")

from src.config import LOG_LEVEL

# Setup logging
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

from src.cli import COMMANDS, EXIT_SOLVER, load_config, run, with_overrides
from src.schemas import ConfigError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cylinderlab",
        description="Minimise convex energies on stretched cylinders and check their asymptotics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command)
        p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides output.directory)")
        p.add_argument("--seed", type=int, default=None, help="seed for audits and solver randomness")
    return parser


def main(argv=None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)

    print("=" * 60)
    print(f"CylinderLab: {args.command}")
    print("=" * 60)
    print()

    try:
        config = with_overrides(load_config(args.config), command=args.command, seed=args.seed)
    except ConfigError as exc:
        print("Configuration errors:")
        for issue in exc.issues:
            print(f"  {issue}")
        return exc.exit_code

    try:
        outcome = run(config, out_dir=args.out)
    except OSError as exc:
        logger.error(f"Could not write artifacts: {exc}")
        return EXIT_SOLVER

    print(f"Artifacts: {outcome.out_dir}")
    for audit in outcome.audits:
        print(f"  audit {audit.name:<24} {'PASS' if audit.passed else 'FAIL'}  worst margin {audit.worst_margin:.3e}")
    for check in outcome.checks:
        status = "SKIP" if check.skipped else ("PASS" if check.passed else "FAIL")
        print(f"  check {check.name:<24} {status}")
    if outcome.message:
        print()
        print(outcome.message)
    print("=" * 60)
    return outcome.exit_code


if __name__ == '__main__':
    sys.exit(main())
