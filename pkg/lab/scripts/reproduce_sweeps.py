#!/usr/bin/env python
"""
Reproduce CylinderLab reference runs
=====================================
Runs every configuration in configs/ and prints a one-line status
per run.

Usage:
    python reproduce_sweeps.py
    python reproduce_sweeps.py --only quadratic_sweep power4_sweep --out runs/reference

This will:
1. Load each JSON configuration in configs/ (or the ones named with --only)
2. Run it through the same path as app.py
3. Write artifacts under --out/<config name>/ and report the exit codes
"""

import argparse
import sys
import logging
from pathlib import Path

# Setup logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Add lab to path
LAB_DIR = Path(__file__).parent.parent
sys.path.insert(0, str(LAB_DIR))

from src.cli import EXIT_OK, load_config, run
from src.reporting import read_sweep_csv
from src.schemas import ConfigError

CONFIG_DIR = LAB_DIR / 'configs'


def main(argv=None) -> int:
    """Run the reference configurations and return the worst exit code."""
    parser = argparse.ArgumentParser(description="Run the reference configurations.")
    parser.add_argument("--only", nargs="*", default=None, help="configuration names without .json")
    parser.add_argument("--out", type=Path, default=LAB_DIR / 'runs' / 'reference')
    args = parser.parse_args(argv)

    print("=" * 70)
    print("CylinderLab Reference Runs")
    print("=" * 70)
    print()

    paths = sorted(CONFIG_DIR.glob('*.json'))
    if args.only:
        wanted = set(args.only)
        paths = [p for p in paths if p.stem in wanted]
        missing = wanted - {p.stem for p in paths}
        if missing:
            print(f"ERROR: unknown configurations: {', '.join(sorted(missing))}")
            return 2

    print(f"Configurations: {CONFIG_DIR}")
    print(f"Output: {args.out}")
    print()

    worst = EXIT_OK
    results = []
    for path in paths:
        try:
            config = load_config(path)
        except ConfigError as exc:
            logger.error(f"{path.name}: {exc}")
            results.append((path.stem, exc.exit_code, "invalid configuration"))
            worst = max(worst, exc.exit_code)
            continue

        print(f"Running {path.stem} ({config.command})...")
        outcome = run(config, out_dir=args.out / path.stem)
        failed = [c.name for c in outcome.checks if c.failed]
        failed += [a.name for a in outcome.audits if not a.passed]
        results.append((path.stem, outcome.exit_code, ", ".join(failed) or "ok"))

        csv_path = outcome.out_dir / "sweep.csv"
        if config.command == "sweep" and csv_path.exists():
            frame = read_sweep_csv(csv_path)
            for _, row in frame.iterrows():
                print(f"  ell={row['ell']:<6g} dist_half={row['dist_half']:.4e}  gap={row['sandwich_gap']:.4e}")
        worst = max(worst, outcome.exit_code)

    print()
    print("=" * 70)
    print("Summary")
    print("=" * 70)
    for name, code, detail in results:
        print(f"  {name:<24} exit {code}  {detail}")
    print()
    return worst


if __name__ == '__main__':
    sys.exit(main())
