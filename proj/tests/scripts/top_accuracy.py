#!/usr/bin/env python3
"""Recompute the top test accuracy of each metrics CSV and compare with summary.csv."""
import csv
import statistics
import sys
from pathlib import Path


def top_accuracy(path):
    with open(path, newline="") as f:
        return max(float(row["test_accuracy"]) for row in csv.DictReader(f))


def main(out_dir, strategy):
    out = Path(out_dir)
    with open(out / "summary.csv", newline="") as f:
        rows = {r["strategy"]: r for r in csv.DictReader(f)}
    summary = rows[strategy]
    seeds = [s for s in summary["seeds"].split(";") if s]
    tops = [top_accuracy(out / f"{strategy}_seed{s}.csv") for s in seeds]
    mean = statistics.fmean(tops)
    std = statistics.pstdev(tops)
    ok = abs(mean - float(summary["mean_top_accuracy"])) <= 1e-12 and abs(
        std - float(summary["std_top_accuracy"])) <= 1e-12
    print(f"{strategy}: recomputed {mean!r} +- {std!r}, summary {summary['mean_top_accuracy']} +- "
          f"{summary['std_top_accuracy']}: {'match' if ok else 'MISMATCH'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1], sys.argv[2]))
