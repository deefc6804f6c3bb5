"""Adaptive verified retrieval against the fixed top-k baseline on one corpus.

    python3 scripts/desk_demo.py [--k 8] [--backend live:NAME]

Prints the per-split EM/F1/ARN table for both modes and, per query, how many
documents each mode read and kept.
"""

import argparse

from _desk import add_common, engine_from_args
from samrag.evalx import aggregate
from samrag.orchestrator import Mode


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    add_common(p)
    p.add_argument("--k", type=int, default=8)
    args = p.parse_args()

    engine = engine_from_args(args)
    adaptive = engine.run_suite(mode=Mode.SAM_RAG)
    fixed = engine.run_suite(mode=Mode.CONVENTIONAL, k=args.k)

    for title, records in (("adaptive (verified)", adaptive), (f"fixed top-{args.k}", fixed)):
        print(f"\n== {title}")
        print(aggregate(records, engine.bundle, engine.cfg.recall_ks).render())

    print("\nqid   status             read  kept | baseline read")
    for a, b in zip(adaptive, fixed):
        print(f"{a.qid:<5} {a.answer_status:<18} {a.docs_examined:>4}  {a.context_size_final:>4} | {b.docs_examined:>4}")


if __name__ == "__main__":
    main()
