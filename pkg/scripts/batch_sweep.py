"""How batch size and regeneration budget move reading cost and retained context.

    python3 scripts/batch_sweep.py [--batch-sizes 1,2,4] [--max-regen 0,2]
"""

import argparse

from _desk import add_common, engine_from_args
from samrag.evalx import aggregate


def ints(text):
    return [int(x) for x in text.split(",")]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    add_common(p)
    p.add_argument("--batch-sizes", type=ints, default=[1, 2, 4])
    p.add_argument("--max-regen", type=ints, default=[0, 2])
    args = p.parse_args()

    print("batch  regen      EM     ARN  examined  verified")
    for bs in args.batch_sizes:
        for regen in args.max_regen:
            engine = engine_from_args(args, batch_size=bs, max_regen=regen)
            m = aggregate(engine.run_suite(), engine.bundle).splits["All"]
            print(f"{bs:>5}  {regen:>5}  {100 * m.em:6.2f}  {m.arn:6.2f}  {m.docs_examined:8.2f}  {100 * m.verified_rate:7.2f}%")


if __name__ == "__main__":
    main()
