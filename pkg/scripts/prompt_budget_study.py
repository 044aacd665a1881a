#!/usr/bin/env python3
"""Prompt-budget study: median (Q1-Q3) DSC/NSD at 1/3/5 clicks.

Generates a phantom suite, drives the region-grow backend through the
interactive loop, and prints the aggregate table for each prompt budget.

    python scripts/prompt_budget_study.py --suite organs --cases 20 --seed 7
"""

import argparse
import tempfile
from pathlib import Path

from petprompt.evaluate import RunConfig, evaluate, summarize, write_report
from petprompt.phantoms import SUITE_NAMES, suite, write_suite


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--suite", choices=SUITE_NAMES, default="organs")
    parser.add_argument("--cases", type=int, default=20)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--points", type=int, nargs="+", default=[1, 3, 5])
    parser.add_argument("--frac", type=float, default=0.41)
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args()

    workdir = args.out or Path(tempfile.mkdtemp(prefix="budget_study_"))
    manifest = write_suite(suite(args.suite, args.cases, args.seed), workdir / "suite")
    config = RunConfig(
        manifest=manifest,
        output_dir=workdir / "report",
        backend="region_grow",
        n_points=tuple(args.points),
        patch_edge=64,
        frac=args.frac,
    )
    report = evaluate(config)
    write_report(report, config.output_dir)
    summary = summarize(report)

    print(f"\nsuite={args.suite} cases={args.cases} backend=region_grow(frac={args.frac})")
    header = f"{'target':<12}{'budget':>8}  {'DSC median (Q1-Q3)':>26}  {'NSD median (Q1-Q3)':>26}"
    print(header)
    print("-" * len(header))
    for target, per_budget in summary["targets"].items():
        for budget, stats in per_budget.items():
            print(
                f"{target:<12}{budget:>7}p  "
                f"{stats['dsc']['formatted']:>26}  {stats['nsd']['formatted']:>26}"
            )
    print(f"\nreports: {config.output_dir}")
    return report.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
