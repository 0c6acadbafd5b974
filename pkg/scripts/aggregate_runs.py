"""Median final and best test accuracy across seeded run directories.

    python scripts/aggregate_runs.py runs/vgg_off_s* runs/vgg_all_s*

Runs are grouped by architecture name and smoothing policy, so one invocation
can summarise several configurations at once.
"""
import argparse
import csv
import json
import statistics
import sys
from collections import defaultdict
from pathlib import Path


def run_summary(run: Path):
    with open(run / "metrics.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return None
    acc = [float(r["test_acc"]) for r in rows]
    return acc[-1], max(acc)


def group_key(run: Path) -> str:
    cfg = json.loads((run / "config.json").read_text())
    return json.dumps({"arch": cfg["arch"].get("name"), "lgnn": cfg["lgnn"]}, sort_keys=True)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("runs", nargs="+", type=Path)
    args = p.parse_args(argv)
    groups = defaultdict(list)
    for run in args.runs:
        summary = run_summary(run)
        if summary is None:
            print(f"skipping {run}: no completed epochs", file=sys.stderr)
            continue
        groups[group_key(run)].append(summary)
    print("runs,median_final_acc,median_best_acc,config")
    for key, values in sorted(groups.items()):
        final = statistics.median(v[0] for v in values)
        best = statistics.median(v[1] for v in values)
        print(f"{len(values)},{final:.4f},{best:.4f},{key}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
