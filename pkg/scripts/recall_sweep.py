"""Recall@k of the embedding ranking for k = 1..max, split by query type.

    python3 scripts/recall_sweep.py [--max-k 10] [--csv out.csv]

These are the numbers behind a recall-versus-retrieval-number curve; no plot
is drawn.
"""

import argparse
import csv
import sys

from _desk import add_common, engine_from_args
from samrag.evalx import aggregate
from samrag.orchestrator import Mode


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    add_common(p)
    p.add_argument("--max-k", type=int, default=10)
    p.add_argument("--csv", help="write the table here instead of stdout")
    args = p.parse_args()

    ks = list(range(1, args.max_k + 1))
    engine = engine_from_args(args, ranking_depth=max(args.max_k, 1))
    # the baseline with k=1 is the cheapest way to record every query's ranking
    records = engine.run_suite(mode=Mode.CONVENTIONAL, k=1)
    report = aggregate(records, engine.bundle, ks)

    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    writer = csv.writer(out)
    writer.writerow(["k", "Text", "Image", "All"])
    for k in ks:
        writer.writerow([k] + [f"{report.splits[s].recall_at_n.get(k, 0.0):.4f}" for s in ("Text", "Image", "All")])
    if args.csv:
        out.close()


if __name__ == "__main__":
    main()
