"""Shared helpers for the experiment scripts."""

import argparse
import os
from pathlib import Path

from wddp.data import SyntheticSpec
from wddp.experiments import emit_report, summarize


def base_parser(description: str) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument("--seeds", type=int, default=20, help="replicates per cell")
    parser.add_argument("--rounds", type=int, default=1000)
    parser.add_argument("--clients", type=int, default=16)
    parser.add_argument("--n", type=int, default=2000, help="synthetic sample count")
    parser.add_argument("--separation", type=float, default=4.0)
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    parser.add_argument("--master-seed", type=int, default=0)
    parser.add_argument("--out", type=Path, required=True)
    return parser


def synthetic(args) -> SyntheticSpec:
    return SyntheticSpec(n=args.n, dim=10, separation=args.separation, seed=args.master_seed)


def report(results, spec, out: Path) -> None:
    for fmt in ("csv", "json", "svg"):
        emit_report(results, fmt, out, spec)
    stats = summarize(results)
    print(f"{'method':<24}{spec.variable:>10}{'accuracy':>12}{'se':>10}{'seeds':>7}")
    for (method, value), (mean, se, count) in sorted(stats.items()):
        print(f"{method:<24}{value:>10g}{mean:>12.4f}{se:>10.4f}{count:>7d}")
    print(f"wrote {out}/results.csv, results.json, accuracy.svg, optimal_gap.svg")
