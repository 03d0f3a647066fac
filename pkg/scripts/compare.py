"""Nelder-Mead versus SHADE plus refinement over seeds, as a table.

Usage: python3 scripts/compare.py --problem multi_basin_growth --seeds 20
"""

import argparse
import sys

from nichecal.bench import compare
from nichecal.problems import builtin_problem


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", default="multi_basin_growth")
    ap.add_argument("--budget", type=int, default=20_000)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--workers", type=int, default=1, help="seeds run in parallel")
    ap.add_argument("--json", help="also write the rows to this file")
    args = ap.parse_args(argv)

    res = compare(builtin_problem(args.problem), args.budget, range(args.seeds), workers=args.workers)
    sys.stdout.write(res.table())
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(res.to_json())
    return 0


if __name__ == "__main__":
    sys.exit(main())
